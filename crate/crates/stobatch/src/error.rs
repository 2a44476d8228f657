//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or truncated input file.
    #[error("format error: {0}")]
    Format(String),

    /// Paired inputs disagree (counts, alignment, label encoding).
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A value fell outside its documented domain.
    #[error("range error: {0}")]
    Range(String),

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// Dimension mismatch between tensors or vectors.
    #[error("shape error: {0}")]
    Shape(String),

    /// An operation would break a differential-privacy precondition.
    #[error("privacy violation: {0}")]
    PrivacyViolation(String),

    /// Parameters degenerate for the requested computation (e.g. zero norm).
    #[error("degenerate parameters: {0}")]
    DegenerateParams(String),

    /// Training produced a non-finite loss.
    #[error("divergence at step {step}: {msg}")]
    Divergence { step: usize, msg: String },

    /// A gradient message carried a step tag that does not match the
    /// server's current step.
    #[error("stale gradient: {0}")]
    StaleGradient(String),

    /// The synchronous barrier did not receive all expected messages.
    #[error("incomplete round: {0}")]
    IncompleteRound(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
