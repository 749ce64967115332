use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        op: String,
        expected: String,
        actual: String,
    },

    #[error("non-finite value in {what} (first offender at flat index {index})")]
    NonFinite { what: String, index: usize },

    #[error("non-finite loss: first non-finite component is `{component}` (epoch {epoch}, step {step})")]
    NonFiniteLoss {
        component: String,
        epoch: usize,
        step: usize,
    },

    #[error("invalid IDX data in {path}: {reason}")]
    Idx { path: String, reason: String },

    #[error("observed transition {from} -> {to} has zero probability; evaluate with smoothing (epsilon > 0)")]
    ZeroProbTransition { from: usize, to: usize },

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(op: impl Into<String>, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op: op.into(),
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
