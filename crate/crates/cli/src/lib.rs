//! Library backing the `rerank-lab` binary.
//!
//! The subcommand implementations live here so integration tests can drive
//! them in-process and compare emitted files byte for byte.

pub mod commands;
pub mod config;
pub mod files;

use thiserror::Error;

/// CLI failure classes, mapped onto exit codes: validation failures exit 1,
/// I/O errors exit 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<rerank_core::Error> for CliError {
    fn from(e: rerank_core::Error) -> Self {
        match e {
            rerank_core::Error::Io(_) | rerank_core::Error::MalformedLine { .. } => {
                CliError::Io(e.to_string())
            }
            other => CliError::Validation(other.to_string()),
        }
    }
}
