use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate {coord:?} out of bounds for dims {dims:?}")]
    OutOfBounds { coord: Vec<usize>, dims: Vec<usize> },

    #[error("label {0} does not occur in the volume")]
    EmptySet(u8),

    #[error("invalid grid shape: {0}")]
    Shape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },

    #[error("payload size mismatch: header declares {expected} values, found {found}")]
    PayloadSize { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integer overflow while building graph: {0}")]
    Overflow(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(position: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            position: position.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
