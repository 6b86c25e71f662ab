//! `eivpred`: simulate errors-in-variables data, compute observable-regression
//! parameters, fit and predict with confidence regions, and run Monte Carlo
//! experiments.
//!
//! Exit codes: 0 success, 1 a `--check` threshold failed, 2 bad config or
//! spec, 3 runtime or numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ConfigError;

#[derive(Parser, Debug)]
#[command(name = "eivpred", version, about = "Best-MSE prediction in errors-in-variables models")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command.
#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed (`master_seed` for experiments).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path; stdout when omitted (where the command allows it).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads for experiments.
    #[arg(long, env = "EIVPRED_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a dataset and write it as CSV plus a JSON sidecar.
    Simulate(Common),
    /// Print the observable-regression parameters of a spec.
    Transform(Common),
    /// Fit a dataset and predict, with confidence regions, at given points.
    FitPredict(Common),
    /// Run a Monte Carlo experiment and write JSON and CSV reports.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Evaluate the config's checks; exit 1 if any fails.
        #[arg(long)]
        check: bool,
    },
}

pub enum Outcome {
    Ok,
    CheckFailed,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use eivpred::Error as E;
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Spec(_) | E::InvalidInput(_) | E::Dimension(_) | E::Unsupported(_) | E::Parse(_) | E::Json(_) => 2,
                _ => 3,
            };
        }
    }
    3
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c),
        Command::Transform(c) => commands::transform(&c),
        Command::FitPredict(c) => commands::fit_predict(&c),
        Command::Experiment { common, check } => commands::experiment(&common, check),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(1),
        Err(err) => {
            if let Some(eivpred::Error::Spec(problems)) = err.chain().find_map(|c| c.downcast_ref::<eivpred::Error>()) {
                eprintln!("error: invalid model specification:");
                for p in problems {
                    eprintln!("  - {p}");
                }
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
