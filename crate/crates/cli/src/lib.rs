//! Scenario runner: configuration, built-in scenarios, closed-loop runs and
//! CSV/JSON output.

pub mod config;
pub mod output;
pub mod runner;
pub mod scenario;

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("no step logs to write for mode `{0}`")]
    EmptyLog(String),
    #[error(transparent)]
    Solver(#[from] sensmpc::Error),
}

impl CliError {
    /// Process exit code: 1 for configuration problems, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
