//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any cadflow component.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch in `{op}` at node {node}: {detail}")]
    Shape {
        op: &'static str,
        node: usize,
        detail: String,
    },

    /// `backward` was asked to differentiate a non-scalar node.
    #[error("backward requires a scalar output, node {node} has shape {shape:?}")]
    NonScalarOutput { node: usize, shape: Vec<usize> },

    /// A conditional mixing matrix became (numerically) singular.
    #[error("singular mixing matrix in flow block {block}: |det| = {det:.3e}")]
    SingularMixing { block: usize, det: f64 },

    /// Bad argument at an API boundary.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// A binary file did not match its declared format.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    /// Training or evaluation was handed an empty dataset.
    #[error("empty dataset")]
    EmptyDataset,

    /// Parameters left the finite range during training.
    #[error("training diverged at step {step}; last finite checkpoint retained")]
    Diverged { step: usize },

    /// A referenced checkpoint or data file is missing.
    #[error("missing file: {0}")]
    MissingFile(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
