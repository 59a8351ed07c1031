//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants are grouped so callers (notably the CLI)
/// can map them onto exit codes: config, data, and divergence failures are
/// kept distinct.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Vector/matrix dimensions do not line up.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// IDX file carried an unexpected magic number.
    #[error("bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },

    /// A data file ended before the declared payload.
    #[error("truncated file: {0}")]
    Truncated(String),

    /// IDX image and label files disagree on the record count.
    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    /// Malformed dataset or report file contents.
    #[error("data error: {0}")]
    Data(String),

    /// An SGLD chain produced a non-finite gradient or iterate.
    #[error("divergence at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
