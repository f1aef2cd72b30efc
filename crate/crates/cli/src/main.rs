//! `gcgrnn` command line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gcgrnn::ErrorClass;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] gcgrnn::Error),
}

impl CliError {
    /// 2 config, 3 data, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Divergence => 4,
                ErrorClass::Io => 1,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gcgrnn", version, about = "Network-wide traffic volume forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset from the [synth] section.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Destination CSV; defaults to [data] csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Window and split the data; write split.csv and normalizer.csv.
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit the configured model; write checkpoint.txt (and history.csv).
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Score a checkpoint on the test split; write the report CSVs.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Forecast the window that starts at series row `start`.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        start: usize,
    },
    /// Write the learned graph filters of a graph model as CSV.
    ExportAdjacency {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Which recurrent cell, e.g. `encoder.0` or `decoder.0`.
        #[arg(long, default_value = "encoder.0")]
        cell: String,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, out } => commands::synth(&config, out.as_deref()),
        Command::Prepare { config } => commands::prepare(&config),
        Command::Train { config } => commands::train(&config),
        Command::Eval { config, checkpoint } => commands::eval(&config, &checkpoint),
        Command::Predict {
            config,
            checkpoint,
            start,
        } => commands::predict(&config, &checkpoint, start),
        Command::ExportAdjacency { checkpoint, out, cell } => {
            commands::export_adjacency(&checkpoint, out.as_deref(), &cell)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
