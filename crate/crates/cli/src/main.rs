//! `djlab`: analysis, pump training, jump export, DJ-GNN training and
//! evaluation, label propagation, gradient checks, SBM generation and sweeps.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, unreadable or
//! inconsistent inputs, unknown subcommand), 2 runtime failure.

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

mod commands;
mod manifest;

use commands::*;

#[derive(Debug, Parser)]
#[command(name = "djlab", version, about = "Diffusion-jump graph learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Homophily, spectral gap and structural heterophily of a labeled graph (JSON on stdout).
    Analyze(AnalyzeArgs),
    /// Train the diffusion pump alone; write U, distances and a JSON report.
    Pump(PumpArgs),
    /// Train the diffusion-jump network on one or more splits.
    Train(TrainArgs),
    /// Score a saved model on one or more splits.
    Evaluate(EvaluateArgs),
    /// Closed-form or iterative label propagation from seed labels.
    Propagate(PropagateArgs),
    /// Finite-difference check of the model and pump gradients on a toy instance.
    Gradcheck(GradcheckArgs),
    /// Generate a stochastic block model with labels, features and a split.
    GenSbm(GenSbmArgs),
    /// Gap x heterophily sweep comparing the network with GCN and MLP baselines.
    Sweep(SweepArgs),
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<djlab_core::Error> for CliError {
    fn from(e: djlab_core::Error) -> Self {
        use djlab_core::Error as E;
        match e {
            E::Divergence { .. } | E::RetryLimit { .. } | E::Singular(_) | E::NonFinite(_) | E::Io { .. } => {
                CliError::Runtime(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Pump(a) => pump(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Propagate(a) => propagate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::GenSbm(a) => gen_sbm(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
