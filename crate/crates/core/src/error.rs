use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weight evaluated to a non-finite value at {point:?}")]
    SingularSample { point: Vec<f64> },
    #[error("parameters outside the admissible regime: {0}")]
    OutOfRegime(String),
    #[error("invalid test function: {0}")]
    InvalidTestFunction(String),
    #[error("coefficient field violates its ellipticity envelope at {point:?}")]
    InvalidCoefficients { point: Vec<f64> },
    #[error("ball of radius {radius} contains only {nodes} grid nodes")]
    RadiusTooSmall { radius: f64, nodes: usize },
    #[error("function is not positive: minimum {min} on the ball")]
    NotPositive { min: f64 },
    #[error("jacobian determinant is negative ({det})")]
    OrientationReversed { det: f64 },
    #[error("map is undefined at {point:?}")]
    SingularPoint { point: Vec<f64> },
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("unknown fixture `{0}`")]
    NotFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
