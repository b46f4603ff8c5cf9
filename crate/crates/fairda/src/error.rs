//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the library.
///
/// The CLI maps these onto exit codes: usage and argument problems exit 1,
/// numeric failures exit 2, and I/O or ingestion failures exit 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions of two objects do not compose.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A computation produced or received a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training hit a non-finite loss; the partial run record is attached
    /// for diagnosis.
    #[error("numeric failure: non-finite loss at epoch {epoch}, iteration {iteration}")]
    NonFiniteLoss {
        epoch: usize,
        iteration: usize,
        record: Box<crate::harness::RunRecord>,
    },

    /// A data file could not be parsed.
    #[error("{path}:{row}: {message}")]
    Ingestion {
        path: String,
        row: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
