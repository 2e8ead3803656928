//! `certainnet`: synthesize data, train, run inference and evaluate.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric divergence.
//! Log verbosity is read from `CERTAINNET_LOG` (default `info`).

mod commands;
mod error;
mod manifest;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{eval, infer, synth, train};

#[derive(Debug, Parser)]
#[command(name = "certainnet", version, about = "Sampling-free uncertainty for heatmap object detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic datasets from a config.
    Synth(synth::SynthArgs),
    /// Train a detector and write a checkpoint plus loss trace.
    Train(train::TrainArgs),
    /// Run a checkpoint on a dataset, or decode an exported heatmap dump.
    Infer(infer::InferArgs),
    /// Score detections against ground truth.
    Eval(eval::EvalArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CERTAINNET_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Infer(a) => infer::run(a),
        Command::Eval(a) => eval::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("certainnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
