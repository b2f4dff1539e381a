//! `fmk`: batch runner for the fm-kinetics experiments.
//!
//! ```text
//! fmk run [EXPERIMENT] --config <path> [--workers <n>] [--output-dir <path>]
//! ```
//!
//! Exit status is 0 on success, 2 for configuration errors (nothing is
//! written) and 3 for numerical failures.

mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Experiment;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(#[from] fm_kinetics::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Parser)]
#[command(name = "fmk", version, about = "Empirical flow-matching experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        /// sample, energy, tails, gradcheck, ot-compare or bounds; defaults to
        /// the config's `experiment` field.
        experiment: Option<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let Command::Run {
        experiment,
        config,
        workers,
        output_dir,
    } = cli.command;
    let requested = match experiment.as_deref() {
        None => None,
        Some(name) => Some(Experiment::parse(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown experiment {name:?}; expected one of {}",
                Experiment::ALL.map(|e| e.name()).join(", ")
            ))
        })?),
    };
    if workers == 0 {
        return Err(CliError::Config("--workers must be at least 1".into()));
    }
    let seed_override = config::seed_override_from_env()?;
    let cfg = config::load(&config, requested, output_dir, seed_override)?;
    experiments::run(&cfg, workers)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fmk: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
