//! `eddy` - experiment and verification CLI.
//!
//! Subcommands:
//! * `gmm-sweep` - the Gaussian-mixture diversity/fidelity experiment
//! * `verify`    - the library's invariant suite, written to `verify.json`
//! * `scaling`   - pair-term dimension-scaling measurement

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod gmm_sweep;
mod report;
mod scaling;
mod verify_cmd;

/// Report/CSV schema version, bumped on any breaking output change.
pub const SCHEMA_VERSION: u32 = 1;

const VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (report schema v1)"
);

#[derive(Parser)]
#[command(name = "eddy", version = VERSION, about = "Particle-guidance experiments on Gaussian mixtures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mixture sweep: coverage curve, marginal test table, CDF dumps.
    GmmSweep {
        /// JSON config; built-in defaults when omitted. Unknown keys are
        /// rejected.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (default: hardware parallelism). Never changes
        /// numeric output.
        #[arg(long)]
        threads: Option<usize>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run every library invariant check and write verify.json.
    Verify {
        #[arg(long)]
        out: PathBuf,
        /// Suite seed (default 20240901).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure the pair-term norm ratio across dimensions; write scaling.csv.
    Scaling {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Exit codes: 0 success, 1 failed verification, 2 unusable config,
/// 3 numerical failure.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("verification failed: {0} check(s) did not pass")]
    VerificationFailed(usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::VerificationFailed(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 3,
        }
    }
}

impl From<eddy_core::Error> for CliError {
    fn from(e: eddy_core::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GmmSweep {
            config,
            out,
            threads,
            seed,
        } => gmm_sweep::run(config.as_deref(), &out, threads, seed),
        Command::Verify { out, seed } => verify_cmd::run(&out, seed.unwrap_or(20240901)),
        Command::Scaling { out, seed } => scaling::run(&out, seed.unwrap_or(20240901)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
