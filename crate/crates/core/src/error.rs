use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("qp solver: {0}")]
    Qp(String),

    #[error("training did not converge after {iters} iterations (final gap {gap})")]
    NotConverged { iters: usize, gap: f64 },

    #[error("unlearnable truth boxes:\n{}", .0.join("\n"))]
    UnlearnableTruth(Vec<String>),

    #[error("dataset errors:\n{}", .0.join("\n"))]
    Dataset(Vec<String>),

    #[error("model file {path}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },

    #[error("model file {path}: checksum mismatch")]
    Checksum { path: PathBuf },

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u64),

    #[error("image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
