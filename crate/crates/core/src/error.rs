//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// An operation precondition was violated (normalization, ranges, counts).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid configuration before any work started.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed on-disk data (UVC1 clip, UWT1 checkpoint, manifest, sidecar).
    #[error("format error in {path} at byte {offset}: {reason}")]
    Format {
        path: String,
        offset: u64,
        reason: String,
    },

    /// Non-finite values where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A verification oracle failed (gradient check, collapse experiment).
    #[error("verification failure: {0}")]
    Verification(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
