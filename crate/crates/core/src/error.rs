use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LensError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum LensError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate triangle{}", .index.map(|i| format!(" {i}")).unwrap_or_default())]
    DegenerateTriangle { index: Option<usize> },

    #[error("lens encloses no mesh vertex")]
    EmptyRoi,

    #[error("lenses {first} and {second} overlap")]
    OverlappingLenses { first: usize, second: usize },

    #[error("system matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config: {0}")]
    Config(String),
}

impl LensError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LensError::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LensError::Io {
            path: path.into(),
            source,
        }
    }
}
