use thiserror::Error;

/// Errors raised by model construction, numerics and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid pulse spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge (last refinement changed the result by {change:e})")]
    QuadratureNotConverged { change: f64 },

    #[error("dimension {dim} exceeds the configured cap of {cap}")]
    DimensionTooLarge { dim: usize, cap: usize },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("inner matrix is numerically singular (condition number {condition:e})")]
    SingularInnerMatrix { condition: f64 },

    #[error("Fisher information matrix is singular")]
    SingularFim,

    #[error("argument {0} is outside the domain [-1/e, 0) of the lower Lambert-W branch")]
    DomainError(f64),

    #[error("epsilon = {epsilon} is outside (0, q/e] for q = {q}")]
    EpsilonOutOfRange { epsilon: f64, q: f64 },

    #[error("component placement left the dispersion domain: {0}")]
    SpacingOutOfDomain(String),

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("noise-parameter optimizer stalled")]
    OptimizerStalled,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Whether the error stems from user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Json(_)
                | Error::InvalidGeometry(_)
                | Error::InvalidSpectrum(_)
                | Error::InvalidParameter(_)
                | Error::EpsilonOutOfRange { .. }
                | Error::SpacingOutOfDomain(_)
                | Error::DimensionTooLarge { .. }
        )
    }
}
