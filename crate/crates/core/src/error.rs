//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the simulator and its numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("shape mismatch in {0}")]
    ShapeMismatch(&'static str),

    #[error("non-finite value produced at layer {layer}")]
    NonFinite { layer: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed model bytes: {0}")]
    Decode(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("cannot place entities: {0}")]
    Placement(String),

    #[error("trace: {0}")]
    Trace(String),

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }

    /// Attach a round index to an error raised inside a communication round.
    pub fn in_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round { round, source: Box::new(e) },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
