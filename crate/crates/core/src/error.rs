//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide error. Variants are grouped by what the caller did wrong
/// (shapes, inputs, config, ordering) versus what the environment did
/// wrong (I/O, corrupt checkpoint).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two tensors that must agree in shape do not. Both shapes are named
    /// so the message is actionable without a debugger.
    #[error("shape mismatch in {op}: left is {lhs:?}, right is {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A value-level precondition failed (NaN input, index out of range,
    /// empty slice where one element is required, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is outside its documented domain.
    #[error("invalid config: {0}")]
    Config(String),

    /// An operation was called in the wrong order (backward before forward,
    /// step without gradients, backward twice on one tape, ...).
    #[error("invalid state: {0}")]
    State(String),

    /// A run, task, or model config is inconsistent with itself or with
    /// the data it describes.
    #[error("invalid spec: {0}")]
    Spec(String),

    /// A checkpoint exists but cannot be used (wrong schema version,
    /// mismatched model spec, corrupt payload).
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Filesystem failure. The path is carried so batch drivers can report
    /// which of many files failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Helper for wrapping `std::io::Error` with the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
