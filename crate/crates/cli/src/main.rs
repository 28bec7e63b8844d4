mod args;
mod commands;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mcqp_core::experiments::ConfigError;
use mcqp_core::McqpError;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] McqpError),
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ConfigError },
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot start worker threads: {0}")]
    Threads(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Core(McqpError::Config(_) | McqpError::Domain(_) | McqpError::ContractViolation(_)) => 2,
            CliError::Core(McqpError::Resource(_) | McqpError::Io(_)) => 3,
            CliError::Io { .. } | CliError::Threads(_) => 3,
            CliError::Core(McqpError::RetriesExhausted { .. }) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Write `text` to `path`, or stdout when no path is given.
pub fn emit(path: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match path {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        }),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.global.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Threads(e.to_string()))?;
    }
    let out = match &cli.command {
        Command::Price(a) => commands::price(&cli.global, a)?,
        Command::Experiment(a) => commands::experiment(&cli.global, a)?,
        Command::RngTest(a) => commands::rng_test(&cli.global, a)?,
        Command::QaeSweep(a) => commands::qae_sweep(&cli.global, a)?,
        Command::Risk(a) => commands::risk(&cli.global, a)?,
        Command::StateDump(a) => commands::state_dump(&cli.global, a)?,
    };
    emit(cli.global.out.as_ref(), &out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mcqp: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
