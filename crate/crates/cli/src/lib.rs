//! Batch front-end: every command reads a flat config, writes its artifacts
//! under `out_dir` with names derived from a hash of the keys that
//! determine them, and leaves a manifest next to the primary artifact.

pub mod commands;
pub mod config;
pub mod manifest;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use manifest::Manifest;

/// Error classes, each with its own exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing or unreadable file: {0}")]
    Io(String),
    #[error("bad input data: {0}")]
    Format(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    #[error("not reproduced: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Format(_) => 4,
            CliError::Numeric(_) => 5,
            CliError::Mismatch(_) => 6,
        }
    }
}

impl From<mpgne::Error> for CliError {
    fn from(e: mpgne::Error) -> Self {
        use mpgne::Error as E;
        let msg = e.to_string();
        match e {
            E::Dimension { .. } | E::Parse { .. } | E::Csv(_) => CliError::Format(msg),
            E::InvalidArgument(_) => CliError::Config(msg),
            E::NonFinite(_) | E::Infeasible(_) | E::Unbounded(_) | E::EmptyDataset(_) => CliError::Numeric(msg),
            E::Io { .. } => CliError::Io(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mpgne", version, about = "Learn solution maps of multiparametric games")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

/// Every command takes `[--config FILE] [--key value ...]`.
#[derive(Debug, Subcommand)]
enum Cmd {
    /// Write the game file.
    GenGame(Rest),
    /// Write train, validation and test datasets.
    GenData(Rest),
    /// Train the value-function models.
    TrainValue(Rest),
    /// Train the solution model on the NI loss.
    TrainGne(Rest),
    /// Train a single-agent solution model.
    TrainMp(Rest),
    /// Evaluate the trained solution model on the test set.
    Eval(Rest),
    /// Predict decisions for parameter rows read from `input`.
    Predict(Rest),
    /// Run a named benchmark end to end: `bench <name> [N=<agents>]`.
    Bench(Rest),
    /// Re-run the command recorded in a manifest and compare outputs.
    Rerun(Rest),
    /// Print every config key with its default.
    Defaults,
}

#[derive(Debug, clap::Args)]
struct Rest {
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    args: Vec<String>,
}

/// Splits `--config FILE` off the override list; remaining leading words
/// before the first `--` flag are positional.
fn split_args(args: &[String]) -> Result<(Vec<String>, Option<std::path::PathBuf>, Vec<String>), CliError> {
    let mut positional = Vec::new();
    let mut config = None;
    let mut overrides = Vec::new();
    let mut i = 0;
    while i < args.len() && !args[i].starts_with("--") {
        positional.push(args[i].clone());
        i += 1;
    }
    while i < args.len() {
        let a = &args[i];
        if a == "--config" {
            let v = args.get(i + 1).ok_or_else(|| CliError::Usage("--config needs a file".into()))?;
            config = Some(v.into());
            i += 2;
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(v.into());
            i += 1;
        } else {
            overrides.push(a.clone());
            i += 1;
        }
    }
    Ok((positional, config, overrides))
}

/// Parses `argv` (without the program name) and runs one command.
pub fn run(argv: &[String]) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(std::iter::once("mpgne".to_string()).chain(argv.iter().cloned())) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let (name, rest) = match cli.command {
        Cmd::Defaults => {
            print!("{}", RunConfig::defaults_text());
            return Ok(());
        }
        Cmd::GenGame(r) => ("gen-game", r),
        Cmd::GenData(r) => ("gen-data", r),
        Cmd::TrainValue(r) => ("train-value", r),
        Cmd::TrainGne(r) => ("train-gne", r),
        Cmd::TrainMp(r) => ("train-mp", r),
        Cmd::Eval(r) => ("eval", r),
        Cmd::Predict(r) => ("predict", r),
        Cmd::Bench(r) => ("bench", r),
        Cmd::Rerun(r) => ("rerun", r),
    };
    let (positional, file, overrides) = split_args(&rest.args)?;
    if name == "rerun" {
        let [path] = positional.as_slice() else {
            return Err(CliError::Usage("rerun takes exactly one manifest path".into()));
        };
        return commands::rerun(std::path::Path::new(path));
    }
    let cfg = RunConfig::resolve(file.as_deref(), &overrides)?;
    commands::dispatch(name, &positional, &cfg).map(|_| ())
}
