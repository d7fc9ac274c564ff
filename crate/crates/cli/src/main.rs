mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flr_core::FlrError;

use crate::commands::Outcome;

#[derive(Parser, Debug)]
#[command(name = "flr", version, about = "Spectral-regularized functional linear regression experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Config file (TOML, or JSON when it starts with `{`).
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Built-in preset: comm-brownian-cubic-a05, comm-saturation-a3, noncomm-s1, lowerbound-m16.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Output directory (overrides `output.dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Base seed (overrides every seed in the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Certify the filter constants A, B, D and omega_p on a grid.
    FiltersCheck,
    /// Monte Carlo convergence-rate experiments.
    Rates,
    /// Varshamov-Gilbert hypothesis family, separations and KL budget.
    Lowerbound,
    /// Draw a dataset and write it as CSV with a truth sidecar.
    Simulate,
    /// Fit a dataset or ingested curves.
    Fit,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::FiltersCheck => "filters-check",
            Command::Rates => "rates",
            Command::Lowerbound => "lowerbound",
            Command::Simulate => "simulate",
            Command::Fit => "fit",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match commands::run(cli.command, &cli) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}

/// `FLR_THREADS` sizes the worker pool; results never depend on it.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("FLR_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("FLR_THREADS must be a positive integer, got '{value}'"))?;
    if threads == 0 {
        anyhow::bail!("FLR_THREADS must be a positive integer, got 0");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| anyhow::anyhow!("cannot configure thread pool: {e}"))?;
    Ok(())
}

/// 1 for configuration and input problems, 2 for failed scientific checks.
fn error_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<FlrError>() {
        Some(
            FlrError::Construction(_)
            | FlrError::Resource(_)
            | FlrError::NonFinite { .. }
            | FlrError::Numerical(_)
            | FlrError::Conditioning(_),
        ) => Outcome::Fail.code(),
        _ => 1,
    }
}
