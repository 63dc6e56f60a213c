//! Command-line front end: argument parsing, config resolution, and the
//! `evaluate`, `oracle-select`, `zeroshot`, `diff` and `synth` commands.

pub mod commands;
pub mod settings;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ovseg_core::ErrorKind;
use serde_json::Value;
use thiserror::Error;

use settings::{DiffSettings, EvalSettings, SynthSettings, ZeroshotSettings};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] ovseg_core::Error),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Io => EXIT_IO,
                ErrorKind::Internal => EXIT_INTERNAL,
            },
            CliError::Config(_) => EXIT_VALIDATION,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ovseg", version, about = "Panoptic quality diagnostics for open-vocabulary segmentation")]
pub struct Cli {
    /// Worker threads for per-image work.
    #[arg(long, global = true, env = "OVSEG_JOBS")]
    pub jobs: Option<usize>,
    /// JSON config file; keys are the long flag names of the subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fuse candidates into panoptic maps and score them against ground truth.
    Evaluate(EvalSettings),
    /// Hungarian mask selection against ground truth, then fusion and scoring.
    OracleSelect(EvalSettings),
    /// Classify ground-truth segments from pooled features and text embeddings.
    Zeroshot(ZeroshotSettings),
    /// Classes whose recall collapses relative to a reference run.
    Diff(DiffSettings),
    /// Write a synthetic dump, ground truth and taxonomy.
    Synth(SynthSettings),
}

/// Worker count: flag or OVSEG_JOBS, then the config file, then the
/// number of available cores.
fn resolve_jobs(flag: Option<usize>, file: Option<&mut Value>) -> Result<usize, CliError> {
    let from_file = match file.and_then(|v| v.as_object_mut()).and_then(|m| m.remove("jobs")) {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| CliError::Config("\"jobs\" in the config file must be a positive integer".into()))?
                as usize,
        ),
    };
    let jobs = flag
        .or(from_file)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    Ok(jobs)
}

/// Runs a parsed command line, writing results to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut file = cli.config.as_deref().map(settings::load_config_file).transpose()?;
    let jobs = resolve_jobs(cli.jobs, file.as_mut())?;
    let file = file.as_ref();
    match &cli.command {
        Command::Evaluate(s) => {
            let config = settings::merge(s, file)?.resolve("evaluate")?;
            commands::evaluate(&config, "evaluate", jobs, stdout)
        }
        Command::OracleSelect(s) => {
            let config = settings::merge(s, file)?.resolve("oracle-select")?;
            commands::evaluate(&config, "oracle-select", jobs, stdout)
        }
        Command::Zeroshot(s) => {
            let config = settings::merge(s, file)?.resolve()?;
            commands::zeroshot(&config, jobs, stdout)
        }
        Command::Diff(s) => {
            let config = settings::merge(s, file)?.resolve()?;
            commands::diff(&config, stdout)
        }
        Command::Synth(s) => {
            let config = settings::merge(s, file)?.resolve()?;
            commands::synth(&config, jobs)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors go to `stderr`.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let rendered = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(stderr, "{rendered}");
            } else {
                let _ = write!(stdout, "{rendered}");
            }
            return code;
        }
    };
    match run(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
