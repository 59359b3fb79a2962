use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {field} at {location}")]
    NonFiniteField {
        field: &'static str,
        location: String,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("Lyapunov system is numerically singular (pivot ratio {pivot_ratio:.3e})")]
    SingularSystem { pivot_ratio: f64 },

    #[error("step size {dt} violates the {scheme} guard (limit {limit})")]
    StabilityViolation {
        scheme: &'static str,
        dt: f64,
        limit: f64,
    },

    #[error("state norm {norm:.3e} exceeded blow-up threshold at step {step}")]
    BlowUp { step: usize, norm: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("index out of range: {0}")]
    IndexError(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("path {path} at epsilon {epsilon} failed: {source}")]
    PathFailed {
        epsilon: f64,
        path: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Configuration and validation problems map to exit code 1, everything
    /// else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_) | Error::UnknownModel(_) | Error::Json(_)
        )
    }
}
