//! `prefnet`: train, query and evaluate preference-network recommenders.
//!
//! Exit status: 0 success, 1 invalid configuration, 2 runtime failure,
//! 3 training divergence.

mod commands;
mod config;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunArgs;

#[derive(Parser, Debug)]
#[command(name = "prefnet", version, about = "Preference-network recommender experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model on the training ratings and write a checkpoint.
    Train(RunArgs),
    /// Predict ratings for `user,item` pairs with a trained checkpoint.
    Predict(RunArgs),
    /// Write energy-ranked top-N lists with a trained checkpoint.
    Recommend(RunArgs),
    /// Score a checkpoint: rating metrics, top-N table and recall sweep.
    Evaluate(RunArgs),
    /// Retrain every model variant on subsampled training data.
    Sweep(RunArgs),
}

/// Configuration problems, reported together.
#[derive(Debug)]
pub struct Invalid(pub Vec<String>);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "invalid configuration:")?;
        for e in &self.0 {
            writeln!(f, "  - {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() {
        return 1;
    }
    match err.downcast_ref::<prefnet::Error>() {
        Some(prefnet::Error::Validation(_)) => 1,
        Some(prefnet::Error::Diverged { .. }) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, args) = match &cli.command {
        Command::Train(a) => ("train", a),
        Command::Predict(a) => ("predict", a),
        Command::Recommend(a) => ("recommend", a),
        Command::Evaluate(a) => ("evaluate", a),
        Command::Sweep(a) => ("sweep", a),
    };
    match commands::run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
