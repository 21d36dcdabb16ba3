mod commands;
mod config;
mod policy;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{BenchArgs, CalibrateArgs, EvalArgs, SweepArgs, SynthArgs, TrainArgs};
use config::CommonArgs;

/// Early-exit CNN pipeline for WiFi fingerprint localization.
#[derive(Parser, Debug)]
#[command(name = "eeloc", version)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic fingerprint dataset (native CSV).
    Synth(SynthArgs),
    /// Train the backbone and final head.
    Train(TrainArgs),
    /// Train the exit branches of a trained model, backbone frozen.
    TrainExits,
    /// Evaluate every exit configuration on the calibration split and store the selected one.
    Calibrate(CalibrateArgs),
    /// Evaluate a policy on one split.
    Eval(EvalArgs),
    /// Threshold sensitivity sweep.
    Sweep(SweepArgs),
    /// Wall-clock timing with confidence intervals, or a depth study.
    Bench(BenchArgs),
}

/// Exit status and label for an error.
fn categorize(err: &anyhow::Error) -> (u8, &'static str) {
    use eeloc::Error;
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Prerequisite(_)) => (3, "prerequisite"),
        Some(Error::InvalidArgument(_) | Error::Shape(_)) => (2, "invalid argument"),
        Some(Error::Parse { .. } | Error::Format(_) | Error::Csv(_) | Error::Json(_)) => {
            (4, "data")
        }
        Some(Error::Io(_)) => (4, "io"),
        Some(Error::Divergence { .. }) => (5, "training"),
        None => (1, "error"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&cli.common, &a),
        Command::Train(a) => commands::train(&cli.common, &a),
        Command::TrainExits => commands::train_exits(&cli.common),
        Command::Calibrate(a) => commands::calibrate(&cli.common, &a),
        Command::Eval(a) => commands::eval(&cli.common, &a),
        Command::Sweep(a) => commands::sweep(&cli.common, &a),
        Command::Bench(a) => commands::bench(&cli.common, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, label) = categorize(&e);
            eprintln!("error [{label}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
