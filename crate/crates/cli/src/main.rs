//! `ppmxai` command-line interface.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ppmxai::harness::{HarnessError, ReportFormat};
use thiserror::Error;

#[derive(Parser)]
#[command(
    name = "ppmxai",
    version,
    about = "Evaluate the stability and fidelity of local explanations for process-outcome models"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Output file or directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// csv, json, markdown or all.
    #[arg(long, global = true)]
    pub format: Option<ReportFormat>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log from a generator spec (--config).
    Synth,
    /// Encode an event log into per-bucket feature matrices.
    Encode(commands::EncodeArgs),
    /// Train a gradient-boosted tree model on a feature matrix.
    Train(commands::TrainArgs),
    /// Produce repeated explanations for matrix rows.
    Explain(commands::ExplainArgs),
    /// Score explanation sets for stability.
    EvalStability(commands::EvalStabilityArgs),
    /// Score explanation sets for perturbation fidelity.
    EvalFidelity(commands::EvalFidelityArgs),
    /// Run a full experiment (--config).
    Run,
    /// Re-emit a saved report bundle in another format.
    Report(commands::ReportArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(HarnessError),
}

pub fn data(e: impl Into<HarnessError>) -> CliError {
    match e.into() {
        HarnessError::Config(msg) => CliError::Usage(msg),
        other => CliError::Data(other),
    }
}

/// Success, or success with some failed work items.
pub enum Outcome {
    Complete,
    Partial(usize),
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
    let c = &cli.common;
    let result = match &cli.command {
        Command::Synth => commands::synth(c),
        Command::Encode(a) => commands::encode(c, a),
        Command::Train(a) => commands::train(c, a),
        Command::Explain(a) => commands::explain(c, a),
        Command::EvalStability(a) => commands::eval_stability(c, a),
        Command::EvalFidelity(a) => commands::eval_fidelity(c, a),
        Command::Run => commands::run(c),
        Command::Report(a) => commands::report(c, a),
    };
    match result {
        Ok(Outcome::Complete) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("warning: {n} work items failed; see the failure records");
            ExitCode::from(3)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
