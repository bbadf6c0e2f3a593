//! Error type shared across the crate.

/// Errors reported by the library.
///
/// Shape and configuration problems are programmer-facing and carry a
/// description of what was expected; numeric failures carry enough context
/// (datum index, epoch/batch) to locate the offending input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("dataset not installed: {0}")]
    DatasetNotInstalled(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
