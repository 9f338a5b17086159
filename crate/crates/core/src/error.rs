use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector ({x}, {y}, {z}) is not unit length")]
    NotUnit { x: f64, y: f64, z: f64 },

    #[error("invalid spherical harmonic index (l={ell}, m={m})")]
    InvalidShIndex { ell: usize, m: usize },

    #[error("invalid degree set: {0}")]
    InvalidDegrees(String),

    #[error("concentration must be positive and finite, got {0}")]
    InvalidKappa(f64),

    #[error("shape mismatch in {op}: left is {left:?}, right is {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("loss must be a 1x1 scalar, got shape {0:?}")]
    NonScalarLoss((usize, usize)),

    #[error("length mismatch in {op}: {left} vs {right}")]
    LengthMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative density {0} passed to quadrature")]
    NegativeDensity(f64),

    #[error("degenerate camera pose: {0}")]
    DegeneratePose(String),

    #[error("view direction is back-facing (n.wo = {0})")]
    BackFacing(f64),

    #[error("non-finite loss {value} at step {step}")]
    NonFiniteLoss { step: usize, value: f64 },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
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

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
