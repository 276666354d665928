//! Failure classes of the front end and their exit codes.

use thiserror::Error;

/// A failure of one subcommand.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments.
    #[error("{0}")]
    Validation(String),
    /// A solver, check or file operation failed.
    #[error("{0}")]
    Solver(String),
}

impl CliError {
    /// Process exit code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Solver(_) => 3,
        }
    }
}

impl From<oscilla::error::Error> for CliError {
    fn from(e: oscilla::error::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Solver(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Solver(format!("i/o error: {e}"))
    }
}
