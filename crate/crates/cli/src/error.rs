use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("range error: {0}")]
    Range(String),
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("i/o error at {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Core(#[from] bare::Error),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    /// Process exit status: 2 for bad invocations, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Range(_) => 2,
            CliError::Clap(e) => e.exit_code(),
            CliError::Io { .. } | CliError::Core(_) => 1,
        }
    }
}
