//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input audio does not meet a precondition (length, sample rate, ...).
    #[error("invalid audio: {0}")]
    InvalidAudio(String),

    /// Matrix or sequence shapes are inconsistent.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A parameter is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Segment lists or labels violate an invariant.
    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    /// A file could not be parsed (RTTM, embedding dump, config, manifest).
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    /// A checkpoint is incompatible with the running configuration.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Training diverged; carries the diagnostic snapshot.
    #[error("non-finite loss at step {step} (lr {lr:.3e}, grad norm {grad_norm:.3e})")]
    NonFiniteLoss { step: usize, lr: f64, grad_norm: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }
}
