//! `hyperflux`: train, evaluate and forecast directed hyperedge event models.
//!
//! Exit codes: 0 success, 1 other failure, 2 dataset not found or usage
//! error, 3 checkpoint version mismatch, 4 invalid configuration, 5
//! non-finite loss or gradient.

mod commands;
mod config;
mod failure;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvaluateArgs, ForecastArgs, InspectArgs};
use config::{RunArgs, SynthArgs};
use failure::{code, Failure};

#[derive(Parser)]
#[command(name = "hyperflux", version, about, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with validation-based model selection; writes a checkpoint, the
    /// loss curve and the resolved configuration.
    Train(RunArgs),
    /// Score a split with a checkpoint; writes JSON and CSV reports.
    Evaluate(EvaluateArgs),
    /// Per-node waiting times and candidate hyperedges as JSON Lines.
    Forecast(ForecastArgs),
    /// Write a planted synthetic stream.
    Synth(SynthArgs),
    /// Print dataset statistics.
    Inspect(InspectArgs),
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Forecast(a) => commands::forecast_cmd(a),
        Command::Synth(a) => commands::synth(a),
        Command::Inspect(a) => commands::inspect(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(code::DATASET_OR_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
