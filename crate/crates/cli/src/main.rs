//! `degenlap`: batch front-end writing JSON, CSV and PGM reports.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand as ClapSubcommand};

use config::{Overrides, RunConfig, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] degenlap::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Core(degenlap::Error::Io(_)) => 3,
            CliError::Core(degenlap::Error::Csv(e)) if e.is_io_error() => 3,
            _ => 2,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "degenlap", version, about = "Weighted p-Laplacian experiments with reproducible reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand, Debug)]
enum Command {
    /// Estimate A_p, A_1, RH_t and balance constants of a weight.
    Weights(Overrides),
    /// Solve the Dirichlet problem on a grid.
    Solve(Overrides),
    /// Oscillation, Hölder and continuity diagnostics of a grid solution.
    Diagnose(Overrides),
    /// Distortion quantities and weak residuals of a mapping.
    Distortion(Overrides),
    /// List the fixtures, or verify one with `--fixture`.
    Catalog(Overrides),
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DEGENLAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("DEGENLAP_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let (sub, flags) = match &cli.command {
        Command::Weights(f) => (Subcommand::Weights, f),
        Command::Solve(f) => (Subcommand::Solve, f),
        Command::Diagnose(f) => (Subcommand::Diagnose, f),
        Command::Distortion(f) => (Subcommand::Distortion, f),
        Command::Catalog(f) => (Subcommand::Catalog, f),
    };
    let cfg = RunConfig::resolve(sub, flags)?;
    commands::prepare_output(&cfg)?;
    match sub {
        Subcommand::Weights => commands::run_weights(&cfg),
        Subcommand::Solve => commands::run_solve(&cfg),
        Subcommand::Diagnose => commands::run_diagnose(&cfg),
        Subcommand::Distortion => commands::run_distortion(&cfg),
        Subcommand::Catalog => commands::run_catalog(&cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("degenlap: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
