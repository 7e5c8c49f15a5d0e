use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("covariance is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("epsilon floor violated: combined covariance is singular")]
    SingularCovariance,

    #[error("tracking lost: only {matched} correspondences (need {needed})")]
    TrackingLost { matched: usize, needed: usize },

    #[error("no supervised pixels")]
    NoSupervisedPixels,

    #[error("render generation mismatch: forward pass {forward}, map is at {current}")]
    GenerationMismatch { forward: u64, current: u64 },

    #[error("keyframe poses were mutated during map optimization")]
    PoseMutated,

    #[error("missing pose for keyframe {0}")]
    MissingPose(usize),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("dataset read failed at frame {index}: {source}")]
    Dataset {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
