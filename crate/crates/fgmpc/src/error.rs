use std::io;

use fgmpc_core::Error as CoreError;
use thiserror::Error;

/// Command failures, each mapped to a fixed process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Input(String),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn invalid(field: &str, reason: &str) -> Self {
        CliError::Invalid { field: field.to_string(), reason: reason.to_string() }
    }

    /// Core validation errors name the offending parameter.
    pub fn from_core(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter { name, reason } => CliError::invalid(name, reason),
            other => CliError::Input(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Input(_) | CliError::Invalid { .. } | CliError::Io(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}
