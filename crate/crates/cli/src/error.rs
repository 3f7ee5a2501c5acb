use std::io;
use std::path::Path;

use flowcast_core::FlowError;
use serde_json::json;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] FlowError),

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        let kind = source.kind();
        CliError::Io {
            path: path.display().to_string(),
            source: io::Error::new(kind, source.to_string()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => "missing_file",
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
            CliError::Json(_) => "json",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(FlowError::Config(_)) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}
