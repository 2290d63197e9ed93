use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("descriptor width mismatch: {left} vs {right} bits")]
    WidthMismatch { left: usize, right: usize },

    #[error("odometry distance {distance} m outside path [0, {end}] m")]
    OutOfRange { distance: f64, end: f64 },

    #[error("no consensus: histogram voting had nothing to vote on")]
    NoConsensus,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("teaching failed: {0}")]
    Teach(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
