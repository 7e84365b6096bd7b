mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::Config;
use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "wigner-clt",
    version,
    about = "Linear eigenvalue statistics of Wigner matrices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Exit with status 3 when the run's verdict fails.
    #[arg(long, global = true)]
    assert: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "WIGNER_CLT_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print CLT constants for the configured test function and ensemble.
    Constants { config: PathBuf },
    /// Dump per-replica linear statistics.
    Simulate { config: PathBuf },
    /// KS distance against N with a fitted rate.
    RateScan { config: PathBuf },
    /// Observed against predicted skewness.
    ThirdMoment { config: PathBuf },
    /// Resolvent checks: locallaw, decomp, eg, hs, two-point, three-point.
    GreenCheck {
        config: PathBuf,
        /// Overrides the config's `check` field.
        #[arg(long)]
        check: Option<String>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let started = chrono::Utc::now().to_rfc3339();
    let (name, path) = match &cli.command {
        Command::Constants { config } => ("constants", config),
        Command::Simulate { config } => ("simulate", config),
        Command::RateScan { config } => ("rate-scan", config),
        Command::ThirdMoment { config } => ("third-moment", config),
        Command::GreenCheck { config, .. } => ("green-check", config),
    };
    let config = Config::load(path)?;
    if cli.workers == Some(0) {
        return Err(CliError::Config("--workers must be positive".into()));
    }
    let ctx = Context {
        config: &config,
        out: &cli.out,
        assert: cli.assert,
        command: name,
        started,
    };
    let workers = cli.workers;
    wigner_clt::montecarlo::with_workers(workers, || match &cli.command {
        Command::Constants { .. } => commands::constants(&ctx),
        Command::Simulate { .. } => commands::simulate(&ctx),
        Command::RateScan { .. } => commands::rate_scan(&ctx),
        Command::ThirdMoment { .. } => commands::third_moment(&ctx),
        Command::GreenCheck { check, .. } => commands::green_check(&ctx, check.as_deref()),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wigner-clt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
