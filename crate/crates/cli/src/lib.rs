//! Command-line driver: loads a run configuration, runs a command and writes
//! its CSV outputs plus a manifest.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use statarb_core::ErrorKind;

pub use commands::{run, Outcome};
pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] statarb_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Runtime => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "statarb", version, about = "Factor-replication statistical arbitrage backtester")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Backtest,
    Gridsearch,
    Synth,
    TrainLstm,
    Report,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one backtest and write equity, trades, sectors and Sharpe tables.
    Backtest(Options),
    /// Sweep symmetric opening/closing thresholds and write grid.csv.
    Gridsearch(Options),
    /// Generate a synthetic market with ground-truth OU paths.
    Synth(Options),
    /// Train LSTM replication models and write checkpoints.
    TrainLstm(Options),
    /// Recompute the Sharpe table from a finished backtest's outputs.
    Report(Options),
}

impl Command {
    pub fn split(self) -> (CommandKind, Options) {
        match self {
            Command::Backtest(o) => (CommandKind::Backtest, o),
            Command::Gridsearch(o) => (CommandKind::Gridsearch, o),
            Command::Synth(o) => (CommandKind::Synth, o),
            Command::TrainLstm(o) => (CommandKind::TrainLstm, o),
            Command::Report(o) => (CommandKind::Report, o),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory (overrides the config and `STATARB_OUT`).
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, opts) = cli.command.split();
    match run(kind, &opts) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            0
        }
        Err(e) => {
            eprintln!("statarb: {e}");
            e.exit_code()
        }
    }
}
