use thiserror::Error;

/// Errors raised by the simulation core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {dim}: every mode needs at least 2 levels")]
    InvalidDimension { dim: usize },

    #[error("Fock index {index} out of range for dimension {dim}")]
    InvalidIndex { index: usize, dim: usize },

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("state has zero norm: {0}")]
    ZeroVector(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not a valid density matrix: {0}")]
    NotDensityMatrix(String),

    #[error(
        "capacity exceeded: {what} needs {required_bytes} bytes \
         (total dimension {dim}, cap {cap})"
    )]
    Capacity {
        what: &'static str,
        dim: usize,
        cap: usize,
        required_bytes: u128,
    },

    #[error("integration failed at t = {time_reached}: {reason}")]
    Integration { time_reached: f64, reason: String },

    #[error("steady state is not unique: null space has dimension {nullity}")]
    DegenerateSteadyState { nullity: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("division by zero: {0}")]
    ZeroDivisor(&'static str),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
