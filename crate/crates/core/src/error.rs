//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Vectors or matrices of incompatible dimension were combined.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The evaluation point coincides with an atom (or a quadrature node).
    #[error("singular evaluation: {0}")]
    Singularity(String),

    /// Kernel exponent too strong to integrate against a gridded density.
    #[error("non-integrable kernel: alpha = {alpha} must be < n - 2 = {limit} for gridded sources")]
    Integrability { alpha: f64, limit: f64 },

    /// A grid or sweep configuration cannot support the requested operation.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Problem size exceeds a resource guard.
    #[error("resource guard: {0}")]
    Resource(String),

    /// The operation was invoked outside its hypotheses.
    #[error("usage error: {0}")]
    Usage(String),

    /// Numerical quadrature failed to converge or met a non-integrable integrand.
    #[error("quadrature error: {0}")]
    Quadrature(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
