//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// A precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Quantile binning over constant data produces zero-width bins.
    #[error("degenerate bins: data range is empty (min == max)")]
    DegenerateBins,

    /// A token id outside the vocabulary was encountered.
    #[error("invalid token {token} for vocabulary of size {vocab}")]
    InvalidToken { token: u32, vocab: usize },

    /// A text format failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Training produced a non-finite loss and was aborted.
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    /// The requested decode mode is not defined for this modality kind.
    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape { op, details: details.into() }
    }
}
