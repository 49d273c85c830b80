//! Command-line driver for balanced metrics on twisted pairs over the
//! sphere: quantized fixed-point runs, the heat flow they approximate,
//! expansion and quadrature checks, and stability reports.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::ExperimentConfig;

/// Environment variable consulted for the worker thread count when
/// `--threads` is not given.
const THREADS_ENV: &str = "HIGGS_BALANCE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Runtime(String),
}

#[derive(Parser)]
#[command(
    name = "higgs-balance",
    version,
    about = "Balanced metrics and stability reports for twisted pairs on the sphere"
)]
struct Cli {
    /// Experiment description (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for JSON and CSV artifacts.
    #[arg(long, global = true, default_value = "out", value_name = "DIR")]
    out: PathBuf,
    /// Seed for the randomized constructions (the perturbed expansion
    /// metric); everything else is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread count. Overrides HIGGS_BALANCE_THREADS; defaults
    /// to all cores. Results never depend on this, only wall time.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the balanced-metric iteration at one level.
    Balance,
    /// Run the heat flow for the coupled curvature equation.
    Flow,
    /// Balance across a level range and compare with the flow limit.
    Sweep,
    /// Check the quantized expansion defect and its decay rate.
    Bergman,
    /// Compute subbundle weights at a balanced base point.
    Weight,
    /// Search invariant line subbundles and classify the pair.
    Stability,
    /// Validate the quadrature against closed-form section pairings.
    GramOracle,
}

fn resolve_threads(cli: &Cli) -> Result<Option<usize>, CliError> {
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => Some(s.trim().parse().map_err(|_| {
                CliError::Config(format!(
                    "{THREADS_ENV} must be a positive integer, got {s:?}"
                ))
            })?),
            Err(_) => None,
        },
    };
    if threads == Some(0) {
        return Err(CliError::Config("thread count must be positive".into()));
    }
    Ok(threads)
}

fn run(cli: Cli) -> Result<i32, CliError> {
    if let Some(threads) = resolve_threads(&cli)? {
        higgs_balance::configure_threads(threads).map_err(CliError::Runtime)?;
    }
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <PATH> is required".into()))?;
    let config = ExperimentConfig::load(&path)?;
    let ctx = commands::RunContext {
        config,
        out: cli.out,
        seed: cli.seed,
    };
    match cli.command {
        Command::Balance => commands::balance(&ctx),
        Command::Flow => commands::flow(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Bergman => commands::bergman(&ctx),
        Command::Weight => commands::weight(&ctx),
        Command::Stability => commands::stability(&ctx),
        Command::GramOracle => commands::gram_oracle(&ctx),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            let kind = match &err {
                CliError::Config(_) => "config",
                CliError::Io(_) => "io",
                CliError::Runtime(_) => "runtime",
            };
            let code = if matches!(err, CliError::Config(_)) {
                4
            } else {
                1
            };
            eprintln!(
                "{}",
                serde_json::json!({ "error": kind, "message": err.to_string() })
            );
            std::process::exit(code);
        }
    }
}
