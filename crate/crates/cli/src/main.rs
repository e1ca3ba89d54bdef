//! `varflow`: config-driven runner for gradient-flow experiments.
//!
//! Exit codes: 0 when every enabled check passes, 1 when a check fails,
//! 2 for configuration, input or solver errors.

mod checks;
mod commands;
mod config;
mod output;
mod plot;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::setup::Outcome;

#[derive(Parser)]
#[command(name = "varflow", version, about = "Gradient flows of convex integral functionals")]
struct Cli {
    /// Worker threads for sweeps; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured flow and write the trajectory, diagnostics and plots.
    Solve { config: PathBuf },
    /// Run the diagnostics battery.
    Check { config: PathBuf },
    /// Yosida flows over the configured lambda and tau grid.
    Sweep { config: PathBuf },
    /// Classify the configured Φ-functions under the Δ₂ and ∇₂ conditions.
    #[command(name = "probe-delta2")]
    ProbeDelta2 { config: PathBuf },
    /// Luxemburg norm of the field in the [norm] section.
    Norm { config: PathBuf },
    /// Resolvent and Yosida approximation of the initial datum.
    Prox { config: PathBuf },
}

fn verdict(outcome: &Outcome) -> ExitCode {
    outcome.print();
    if outcome.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let load = |p: &PathBuf| RunConfig::load(p);
    Ok(match &cli.command {
        Command::Solve { config } => verdict(&commands::run_solve(&load(config)?)?),
        Command::Check { config } => verdict(&commands::run_check(&load(config)?)?),
        Command::Sweep { config } => verdict(&commands::run_sweep(&load(config)?)?),
        Command::ProbeDelta2 { config } => {
            commands::run_probe(&load(config)?)?;
            ExitCode::SUCCESS
        }
        Command::Norm { config } => {
            commands::run_norm(&load(config)?)?;
            ExitCode::SUCCESS
        }
        Command::Prox { config } => verdict(&commands::run_prox(&load(config)?)?),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
