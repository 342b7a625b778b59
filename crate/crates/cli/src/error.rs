use std::process::ExitCode;

use thiserror::Error;

/// Errors grouped by the exit code they map to. Verdicts never affect the
/// exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Decode(String),
    #[error("{0}")]
    Backend(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Manifest(String),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Decode(_) => 2,
            CliError::Backend(_) | CliError::Config(_) => 3,
            CliError::Manifest(_) => 4,
            CliError::Output(_) => 1,
        })
    }
}
