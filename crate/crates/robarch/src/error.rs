//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by configuration handling, analysis, fitting, the engine,
/// and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration violated one of its invariants. The message names the
    /// offending field path and the violated rule.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A config document failed to parse (syntax or type error).
    #[error("config parse error: {0}")]
    Parse(String),

    /// An unknown preset name was requested.
    #[error("unknown preset: {0}")]
    UnknownPreset(String),

    /// A budget fit could not reach the target within bounds/tolerance.
    #[error("budget fit failed: {0}")]
    BudgetFit(String),

    /// Tensor/layer shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A requested operation is not valid in the current state
    /// (e.g. MAC counting at an indivisible resolution).
    #[error("{0}")]
    Invalid(String),

    /// Dataset loading/validation failure.
    #[error("dataset error: {0}")]
    Data(String),

    /// Checkpoint serialization/deserialization failure.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training diverged (non-finite loss).
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
