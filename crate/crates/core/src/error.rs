//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures reported by the library.
///
/// Variants fall into two families: validation failures (bad input, violated
/// preconditions) and solver failures (non-convergence, singular systems,
/// spectral checks that reject a candidate). [`Error::is_validation`] tells
/// them apart so front ends can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// An input parameter violates its documented invariant.
    #[error("{0}")]
    Validation(String),

    /// Mesh construction, import, or quality check failed.
    #[error("mesh error: {0}")]
    Mesh(String),

    /// A cell has non-positive measure.
    #[error("inverted cell {cell} (signed measure {measure:e})")]
    InvertedCell {
        /// Index of the offending cell.
        cell: usize,
        /// Its signed measure.
        measure: f64,
    },

    /// An iterative method stopped without meeting its tolerance.
    #[error("{stage} did not converge after {iterations} iterations (last residual {residual:e}){hint}")]
    NonConvergence {
        /// Which solver gave up.
        stage: String,
        /// Iterations performed.
        iterations: usize,
        /// Residual at the last iterate.
        residual: f64,
        /// Optional remedy, formatted with a leading separator.
        hint: String,
    },

    /// A factorization or linear solve failed.
    #[error("{0}")]
    Singular(String),

    /// An eigenvalue computation or a spectral hypothesis check failed.
    #[error("{0}")]
    Spectral(String),

    /// Reading or writing a file failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A text artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Builds a validation error from any displayable message.
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Builds a non-convergence error without a hint.
    pub fn non_convergence(stage: impl Into<String>, iterations: usize, residual: f64) -> Self {
        Error::NonConvergence {
            stage: stage.into(),
            iterations,
            residual,
            hint: String::new(),
        }
    }

    /// True for errors caused by invalid input rather than by a solver.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Parse(_) | Error::Mesh(_) | Error::InvertedCell { .. }
        )
    }
}
