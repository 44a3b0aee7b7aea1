//! `ceg`: simulate, train, evaluate, generate and predict from the command line.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 usage, 3 invalid data,
//! 4 numeric failure (divergence, bound violation).

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{DataMismatch, Usage};

#[derive(Debug, Parser)]
#[command(
    name = "ceg",
    version,
    about = "Conditional event generator for marked point processes"
)]
struct Cli {
    /// worker threads (results do not depend on this)
    #[arg(long, global = true, env = "CEG_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a classical process by thinning
    Simulate(commands::SimulateArgs),
    /// Fit a generator to a dataset
    Train(commands::TrainArgs),
    /// Compare a trained model with a known ground truth
    Evaluate(commands::EvaluateArgs),
    /// Generate sequences from a trained model
    Generate(commands::GenerateArgs),
    /// Predict the next event after each history
    Predict(commands::PredictArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if cause.is::<DataMismatch>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<ceg_core::Error>() {
            return if e.is_data_error() {
                3
            } else if e.is_numeric() {
                4
            } else if matches!(e, ceg_core::Error::InvalidArgument(_)) {
                2
            } else {
                1
            };
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return config::usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Generate(a) => commands::generate_cmd(a),
        Command::Predict(a) => commands::predict_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
