use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quadfdi::config::Scale;

mod commands;

/// Quadrotor actuator-fault data generation, training and evaluation.
#[derive(Debug, Parser)]
#[command(name = "quadfdi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; profile defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured scale profile (desk or paper).
    #[arg(long)]
    scale: Option<Scale>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Roll out one epoch of training data and write it with a manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Dataset file; the manifest goes next to it as `<out>.manifest.json`.
        #[arg(long)]
        out: PathBuf,
        /// Epoch index of the data sub-stream.
        #[arg(long, default_value_t = 0)]
        epoch: u64,
    },
    /// Train a detector, on the fly or from a generated dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pre-generated dataset; data is synthesized every epoch when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Checkpoint file; the loss trace goes to `<out>.loss.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment on one or more checkpoints.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        /// rotation-cases, fault-levels, controller-shift or param-perturbation.
        #[arg(long)]
        experiment: String,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Concatenate reports of one experiment into a single CSV.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Report CSV files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
