//! `probloc`: train, evaluate and sweep the positioning models.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure. Failures print one line `error[<kind>]: <reason>`
//! on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Cmd;
use config::RunConfig;
use probloc::Error;

#[derive(Parser)]
#[command(name = "probloc", version, about = "Probabilistic WiFi fingerprint positioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Opts {
    /// Flat TOML file with any of the option keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Subcommand)]
enum Command {
    /// Train a next-location network; writes checkpoint, traces and a held-out report.
    TrainCmdrnn(Opts),
    /// Train a VAE and a position predictor on a labeled fraction.
    TrainVae(Opts),
    /// Retrain the predictor of a VAE checkpoint.
    TrainPredictor(Opts),
    /// Write predicted positions of a checkpoint next to the truth.
    Predict(Opts),
    /// Report held-out RMSE of a checkpoint, or of a model trained per seed.
    Evaluate(Opts),
    /// Mixture-count or memory-length sweep.
    Sweep(Opts),
    /// Write the latent means of a VAE checkpoint.
    ExportLatent(Opts),
    /// Write a synthetic corridor dataset.
    SynthData(Opts),
    /// Training-loss traces of optimizers or feature detectors.
    Compare(Opts),
    /// M1, M2 and k-NN over labeled fractions.
    Experiment(Opts),
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn exit_code(e: &Error) -> (u8, &'static str) {
    if e.is_numerical() {
        (3, "numerical")
    } else if matches!(e, Error::Config(_)) {
        (1, "usage")
    } else {
        (2, "data")
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("error[usage]: {}", one_line(first));
            return ExitCode::from(1);
        }
    };
    let (cmd, opts) = match cli.command {
        Command::TrainCmdrnn(o) => (Cmd::TrainCmdrnn, o),
        Command::TrainVae(o) => (Cmd::TrainVae, o),
        Command::TrainPredictor(o) => (Cmd::TrainPredictor, o),
        Command::Predict(o) => (Cmd::Predict, o),
        Command::Evaluate(o) => (Cmd::Evaluate, o),
        Command::Sweep(o) => (Cmd::Sweep, o),
        Command::ExportLatent(o) => (Cmd::ExportLatent, o),
        Command::SynthData(o) => (Cmd::SynthData, o),
        Command::Compare(o) => (Cmd::Compare, o),
        Command::Experiment(o) => (Cmd::Experiment, o),
    };
    match commands::execute(cmd, opts.config.as_deref(), &opts.run) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = exit_code(&e);
            eprintln!("error[{kind}]: {}", one_line(&e.to_string()));
            ExitCode::from(code)
        }
    }
}
