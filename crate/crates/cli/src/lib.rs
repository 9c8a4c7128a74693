//! `lossforge` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "lossforge", version, about = "Evolve and analyze classification loss functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the evolutionary search described by a config file.
    Search(SearchArgs),
    /// Train with one loss and tabulate errors against cross-entropy.
    Eval(EvalArgs),
    /// Sample and classify the two-class landscape of a loss.
    #[command(alias = "analyze")]
    Landscape(LandscapeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the environment and the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for fitness evaluation (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep only the first k samples of file-backed datasets.
    #[arg(long)]
    pub take: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Catalog name, formula file, or inline prefix formula.
    pub loss: String,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    /// Catalog name, formula file, or inline prefix formula.
    pub loss: String,
    /// Fixed label of the first class.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(0..=1))]
    pub y_real: u8,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Grid spacing on y_pred.
    #[arg(long, default_value_t = lossforge_core::analysis::DEFAULT_GRID_STEP)]
    pub step: f64,
}

/// Parse `args` and run the selected command.
pub fn main_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code().clamp(0, 255) as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("error: {msg}"),
                CliError::Runtime(err) => eprintln!("error: {err:#}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Search(args) => with_workers(args.run.workers, || commands::search(&args)),
        Command::Eval(args) => with_workers(args.run.workers, || commands::eval(&args)),
        Command::Landscape(args) => commands::landscape(&args),
    }
}

fn with_workers<T>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError>
where
    T: Send,
{
    match workers {
        Some(0) => Err(CliError::Usage("--workers must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Runtime(e.into()))?
            .install(f),
        None => f(),
    }
}
