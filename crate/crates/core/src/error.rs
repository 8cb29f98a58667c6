use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("minibatch is empty")]
    EmptyBatch,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("data exhausted: {0}")]
    DataExhausted(String),

    #[error("machine index {index} out of range (m = {m})")]
    MachineIndex { index: usize, m: usize },

    #[error("expected {expected} vectors (one per machine), got {got}")]
    WrongVectorCount { expected: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
