//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible for the requested operation.
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A forward op produced NaN or infinity.
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    /// An API contract was violated (non-scalar loss, missing gradient, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input does not describe a probability distribution.
    #[error("invalid distribution: {0}")]
    Distribution(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    /// Network or dataset specification is malformed.
    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("data error: {0}")]
    Data(String),

    /// Binary file could not be decoded.
    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    /// A loss term became non-finite during training; the run was aborted.
    #[error("numeric abort: {term} loss of {student} is non-finite (epoch {epoch}, batch {batch})")]
    NumericAbort {
        student: String,
        term: &'static str,
        epoch: usize,
        batch: usize,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
