use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value at graph node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("matrix is not symmetric positive-definite (Cholesky failed at pivot {0})")]
    NotPositiveDefinite(usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("empty cloud")]
    EmptyCloud,

    #[error("degenerate point set: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("point count mismatch: {0}")]
    PointCountMismatch(String),

    #[error("empty channel: {0}")]
    EmptyChannel(String),

    #[error("bad magic")]
    BadMagic,

    #[error("checkpoint version mismatch: found {found:?}")]
    VersionMismatch { found: String },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),

    #[error("undefined metric: {0}")]
    Undefined(String),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("io error on {path}: {source}")]
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

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
