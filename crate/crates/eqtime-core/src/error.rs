//! Error categories shared across the crate.

use thiserror::Error;

/// Crate-wide error type. Variants map to the failure categories surfaced
/// by the CLI as distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not line up for a tensor op.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A masked softmax or masked mean saw a row with no live entries.
    #[error("degenerate row: {0}")]
    DegenerateRow(String),

    /// An API contract was violated (non-scalar loss, double backward, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid model or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Malformed input data, with file location where known.
    #[error("ingestion error at line {line}: {message}")]
    Ingestion { line: usize, message: String },

    /// Transition-matrix estimation failed (empty data, no types).
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Checkpoint or matrix file could not be read/written/verified.
    #[error("persistence error: {0}")]
    Persistence(String),

    /// An event type id outside the known vocabulary.
    #[error("unknown event type: {0}")]
    UnknownType(String),

    /// Training diverged or could not proceed.
    #[error("training error: {0}")]
    Training(String),

    /// Statistical comparison could not be computed.
    #[error("statistics error: {0}")]
    Statistics(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable category name, used by the CLI for exit codes and reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::DegenerateRow(_) => "degenerate-row",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Ingestion { .. } => "ingestion",
            Error::Estimation(_) => "estimation",
            Error::Persistence(_) => "persistence",
            Error::UnknownType(_) => "unknown-type",
            Error::Training(_) => "training",
            Error::Statistics(_) => "statistics",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
