//! Command implementations behind the `levemb` binary.
//!
//! Every command takes a flag set that may be layered over a JSON config file
//! (`--config`); flags win. The merged, fully defaulted config is written next to
//! the command's outputs as `config.json`.

pub mod commands;
pub mod config;
pub mod io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use commands::{EsdScanArgs, EvalArgs, GenDataArgs, GridArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "levemb", version, about = "Learned Levenshtein-distance embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cluster dataset with train/test pair files.
    GenData(GenDataArgs),
    /// Train an embedding model and write a checkpoint.
    Train(TrainArgs),
    /// Sweep embedding dimensions and detect the early-stopping dimension.
    EsdScan(EsdScanArgs),
    /// Evaluate a checkpoint on test pairs.
    Eval(EvalArgs),
    /// Train and evaluate every arch × dim × loss × seed cell.
    Grid(GridArgs),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<levemb_core::Error> for CliError {
    fn from(e: levemb_core::Error) -> Self {
        use levemb_core::Error as E;
        match e {
            E::NonFinite(_) => CliError::Numeric(e.to_string()),
            E::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::EsdScan(a) => commands::esd_scan(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Grid(a) => commands::grid(&a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::usage(e.to_string()))?;
    run(cli)
}

/// Output directory guard: refuses to write into an existing non-empty directory
/// unless `force` is set.
pub fn prepare_out_dir(dir: &PathBuf, force: bool) -> CliResult<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(CliError::usage(format!(
                "output directory {} exists and is not empty (use --force)",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}
