use clap::{Parser, Subcommand};
use daclab_cli::{
    compare_command, init_thread_pool, load_config, run_command, spectrum_command,
    verify_command, EXIT_DIVERGED,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "daclab", about = "Desk-scale decentralized-training laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment config (one run directory per seed)
    Run {
        config: PathBuf,
        /// Reuse <output_dir>/latest instead of a timestamped directory
        #[arg(long)]
        overwrite: bool,
    },
    /// Run a verification harness: radius|stability|alignment|envelope|tilt
    Verify { harness: String, config: PathBuf },
    /// Column-wise difference report between two trace files
    Compare { a: PathBuf, b: PathBuf },
    /// Print the gossip-Laplacian (and Hessian) spectra for a config
    Spectrum { config: PathBuf },
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overwrite } => load_config(&config)
            .and_then(|cfg| run_command(&cfg, overwrite))
            .map(|(dir, diverged)| {
                println!("wrote {}", dir.display());
                if diverged {
                    eprintln!("run diverged; partial outputs kept");
                    EXIT_DIVERGED
                } else {
                    0
                }
            }),
        Command::Verify { harness, config } => load_config(&config)
            .and_then(|cfg| verify_command(&harness, &cfg))
            .map(|(verdicts, pass)| {
                for v in verdicts {
                    println!("{v}");
                }
                i32::from(!pass)
            }),
        Command::Compare { a, b } => compare_command(&a, &b).map(|lines| {
            for l in lines {
                println!("{l}");
            }
            0
        }),
        Command::Spectrum { config } => load_config(&config)
            .and_then(|cfg| spectrum_command(&cfg))
            .map(|lines| {
                for l in lines {
                    println!("{l}");
                }
                0
            }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
