use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is singular (smallest singular value {sigma_min:e}, norm {norm:e})")]
    Singular { sigma_min: f64, norm: f64 },

    #[error("probe outside the admissible domain: {0}")]
    DomainViolation(String),

    #[error("fixed-point iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("infeasible input: {0}")]
    InfeasibleInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("order {0} is not available")]
    MissingOrder(usize),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    /// True for failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Singular { .. }
                | Error::NoConvergence { .. }
                | Error::DomainViolation(_)
                | Error::InfeasibleInput(_)
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
