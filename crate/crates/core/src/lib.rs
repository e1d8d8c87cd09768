//! Desk-scale laboratory for decentralized training dynamics.
//!
//! Implements gossip SGD (DSGD), its adaptive-consensus variant (DSGD-AC),
//! and decentralized Adam (DAdam-AC) over configurable topologies, together
//! with the spectral diagnostics that make their consensus-error dynamics
//! checkable on analytically tractable problems: the disagreement-radius
//! scaling law, the per-Hessian-mode stability boundary, the local loss
//! envelope, and the curvature-tilt spectrum.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod error;
pub mod graph;
pub mod problems;
pub mod rng;
pub mod schedules;
pub mod trace;
pub mod verify;

pub use config::ExperimentConfig;
pub use engine::{Algorithm, RunOutput, WorkerEnsemble};
pub use error::Error;
pub use graph::{LaplacianSpectrum, MixingOperator, TopologyKind, TopologySchedule};
pub use problems::{NoiseModel, Problem, QuadraticProblem, SyntheticTask};
pub use schedules::{ConsensusConfig, LrSchedule};
pub use trace::{MetricRow, ModeRow};

pub type Result<T> = std::result::Result<T, Error>;
