//! loopest: batch leave-one-out treatment effect estimation.
//!
//! Exit codes: 0 success, 2 validation error, 3 runtime error. Failures
//! print a machine-readable JSON envelope to stderr; partial outputs are
//! never left behind.

mod commands;
mod config;
mod csvio;
mod errors;
mod output;
mod svg;

use clap::{Parser, Subcommand};

use config::{EstimateArgs, OracleArgs, SimulateArgs};
use errors::CliResult;

#[derive(Parser)]
#[command(
    name = "loopest",
    version,
    about = "Average treatment effect estimation with leave-one-out potential outcome imputation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the average treatment effect from a CSV of observed data.
    Estimate(EstimateArgs),
    /// Run the bundled simulation studies and write summary tables.
    Simulate(SimulateArgs),
    /// Enumerate the full randomization distribution of a small instance.
    Oracle(OracleArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Estimate(args) => commands::estimate::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Oracle(args) => commands::oracle::run(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("{}", output::error_json(&err));
        std::process::exit(err.exit_code());
    }
}
