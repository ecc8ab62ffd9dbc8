use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("frame mismatch: expected `{expected}`, found `{found}`")]
    FrameMismatch { expected: String, found: String },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("negative disparity {0} px (disparity is an absolute pixel offset)")]
    NegativeDisparity(f64),

    #[error("k = {k} is out of range for a cloud of {size} points")]
    NeighborCount { k: usize, size: usize },

    #[error("reference sampling produced only {count} points (at least {min} required)")]
    SparseReference { count: usize, min: usize },

    #[error("ICP iteration {iteration}: only {count} correspondences within the rejection radius")]
    TooFewCorrespondences { iteration: usize, count: usize },

    #[error(
        "ICP iteration {iteration}: degenerate cross-covariance, rotation about axis \
         [{:.4}, {:.4}, {:.4}] is unconstrained",
        axis[0], axis[1], axis[2]
    )]
    DegenerateCovariance { iteration: usize, axis: [f64; 3] },

    #[error("point cloud has no normals; run normal estimation first")]
    MissingNormals,

    #[error("grid of {cells} cells exceeds the budget of {budget}; use a larger voxel size")]
    GridBudget { cells: usize, budget: usize },

    #[error("{0}")]
    Measurement(String),

    #[error("malformed {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
