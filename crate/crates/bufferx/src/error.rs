//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by geometry, pipeline, and I/O operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("coordinate out of voxel-key range: {0}")]
    OutOfRange(String),

    #[error("sparse patch: {got} neighbors, need at least {need}")]
    SparsePatch { got: usize, need: usize },

    #[error("no descriptors survived at scale {0}")]
    ScaleEmpty(String),

    #[error("insufficient consensus: best candidate has {0} inliers")]
    InsufficientConsensus(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("refinement stalled: all weights collapsed")]
    RefinementStalled,

    #[error("parse error in {path} at {location}: {message}")]
    Parse {
        path: String,
        location: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn parse(path: &std::path::Path, location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            location: location.into(),
            message: message.into(),
        }
    }
}
