use std::path::{Path, PathBuf};

use privagg::{EngineError, ProtocolError, TransportError};
use thiserror::Error;

/// Everything that stops a peer. Each kind maps to its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}:{line}:{column}: {message}", file.display())]
    Parse { file: PathBuf, line: usize, column: usize, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("protocol aborted: {0}")]
    Abort(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } => 2,
            CliError::Validation(_) => 3,
            CliError::Connection(_) => 4,
            CliError::Abort(_) => 5,
            CliError::Io { .. } => 1,
        }
    }

    pub fn parse(file: &Path, line: usize, column: usize, message: impl Into<String>) -> Self {
        CliError::Parse { file: file.to_path_buf(), line, column, message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<TransportError> for CliError {
    fn from(e: TransportError) -> Self {
        CliError::Connection(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        CliError::Abort(e.to_string())
    }
}
