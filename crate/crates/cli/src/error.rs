use std::io::ErrorKind;
use std::path::Path;

use serde_json::json;
use thiserror::Error;

/// Exit status for bad input: flags, configs, files that do not validate.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for failures while running: I/O, divergence.
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] pyformer::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// Missing inputs are a validation problem; anything else the OS
    /// refuses is a runtime failure.
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == ErrorKind::NotFound {
            CliError::Validation(msg)
        } else {
            CliError::Runtime(msg)
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Core(pyformer::Error::Io { source, .. }) if source.kind() != ErrorKind::NotFound => EXIT_RUNTIME,
            CliError::Core(_) => EXIT_VALIDATION,
        }
    }

    pub fn kind(&self) -> &'static str {
        if self.exit_code() == EXIT_VALIDATION {
            "validation"
        } else {
            "runtime"
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({ "error": { "kind": self.kind(), "code": self.exit_code(), "message": self.to_string() } })
    }
}
