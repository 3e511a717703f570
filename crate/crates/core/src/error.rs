use thiserror::Error;

/// Errors produced by the perception, tracking and simulation stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid rigid transform: {0}")]
    InvalidTransform(String),
    /// The projected point has non-positive depth in the camera frame.
    #[error("point lies behind the camera (depth {0})")]
    BehindCamera(f64),
    /// An image ray does not reach the head plane.
    #[error("degenerate view: {0}")]
    DegenerateView(String),
    #[error("innovation covariance is numerically singular (condition number {0:e})")]
    SingularInnovation(f64),
    #[error("could not place actors without overlap after {0} rejections")]
    PlacementFailure(usize),
    #[error("ground truth has no landing zones")]
    EmptyGroundTruth,
    #[error("malformed file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
