use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical error: {0}")]
    NumericalError(String),

    /// AR(1) mode recursion outside its stability region (γλ ≥ 2).
    #[error("unstable mode: {0}")]
    UnstableMode(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("run diverged at iteration {iter}")]
    Diverged { iter: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
