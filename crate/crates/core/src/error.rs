use std::path::PathBuf;

use thiserror::Error;

/// Failures raised by the tensor kernels.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: {dim} is {got}, expected {expected}")]
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: output {dim} would be {size}, must be at least 1")]
    EmptyOutput {
        op: &'static str,
        dim: &'static str,
        size: i64,
    },
    #[error("tensor dimensions must all be at least 1, got {0:?}")]
    ZeroDim([usize; 4]),
    #[error("data length {got} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        shape: [usize; 4],
        expected: usize,
        got: usize,
    },
    #[error("{op}: target class {class} at pixel {index} is outside [0, {classes})")]
    TargetOutOfRange {
        op: &'static str,
        class: usize,
        index: usize,
        classes: usize,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}

impl TensorError {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid { op, msg: msg.into() }
    }
}

/// Crate-level error for everything above the kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Data { path: PathBuf, msg: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Data {
            path: path.into(),
            msg: msg.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
