//! Library error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum D3dError {
    #[error("autodiff: {0}")]
    Autodiff(String),

    /// Near-singular cross-covariance: the caller should skip the pose term
    /// for this batch.
    #[error("degenerate rotation fit (smallest singular value {smin:.3e})")]
    DegenerateRotation { smin: f64 },

    #[error("pose fit: {0}")]
    PoseFit(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training: {0}")]
    Training(String),

    #[error("stage: {0}")]
    Stage(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(String),
}

pub type Result<T> = std::result::Result<T, D3dError>;
