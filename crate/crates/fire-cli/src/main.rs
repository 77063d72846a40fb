//! `fire` — batch CLI for frequency-domain forecasting: train and evaluate
//! models, run drift/basis-evolution analytics, and sweep benchmark grids.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{cmd_analyze, cmd_bench, cmd_eval, cmd_inspect, cmd_train, AnalyzeArgs, BenchArgs};
use config::RunArgs;

#[derive(Parser)]
#[command(
    name = "fire",
    about = "Frequency-domain time series forecasting toolkit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and report test metrics.
    Train(RunArgs),
    /// Evaluate a saved checkpoint on a dataset's test split.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Per-channel concept-drift and basis-evolution report.
    Analyze(AnalyzeArgs),
    /// Grid sweeps: main (lr grid), patch lengths, look-back windows.
    Bench(Box<BenchArgs>),
    /// Print a checkpoint's config and tensor shapes.
    InspectCheckpoint {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval { run, checkpoint } => cmd_eval(run, checkpoint),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Bench(args) => cmd_bench(args),
        Command::InspectCheckpoint { checkpoint } => cmd_inspect(checkpoint),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::DatasetNotFound>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
