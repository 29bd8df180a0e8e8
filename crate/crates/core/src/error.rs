use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("timestamps must be strictly increasing: {current} follows {previous}")]
    NonMonotonic { previous: i64, current: i64 },

    #[error("no candidate lag within ±{max_lag}s overlaps by at least {min_overlap} samples")]
    NoOverlap { max_lag: i64, min_overlap: usize },

    #[error("series for subject {0} share no timestamps after lag correction")]
    EmptyIntersection(String),

    #[error("window length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid split: {0}")]
    Split(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("every grid cell failed")]
    GridExhausted,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
