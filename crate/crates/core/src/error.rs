use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid geometry in {op}: {detail}")]
    Geometry { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("empty tensor passed to {op}")]
    Empty { op: &'static str },

    #[error("backward requires a scalar loss that depends on a trainable leaf: {0}")]
    Backward(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("classifier accuracy {accuracy:.4} is below the gate {gate:.4}")]
    AccuracyGate { accuracy: f64, gate: f64 },

    #[error("numerical abort at step {step}: {detail}")]
    Numerical { step: usize, detail: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image error for {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn geometry(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Geometry {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::AccuracyGate { .. }
            | Error::Geometry { .. }
            | Error::ShapeMismatch { .. }
            | Error::Domain { .. }
            | Error::Empty { .. } => 2,
            Error::NonFinite { .. } | Error::Numerical { .. } => 3,
            Error::Io(_) | Error::Image { .. } | Error::Checkpoint(_) => 4,
            _ => 1,
        }
    }
}
