use thiserror::Error;

/// Errors raised by the solvers and model checks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coefficient sextuplet is not admissible: {0}")]
    Admissibility(String),

    #[error("subdifferential point: f_eps with eps = 0 is not differentiable at xi = 0")]
    SubdifferentialPoint,

    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
