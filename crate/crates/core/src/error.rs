use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("grid needs an even cell count of at least 8, got {0}")]
    InvalidGrid(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("potential violates QJ = -JQ: {0}")]
    NotOffDiagonal(String),

    #[error("restricted system is singular at alpha = {alpha:.6} (sigma_min = {sigma_min:.3e}); not an accelerant")]
    NotAccelerant { alpha: f64, sigma_min: f64 },

    #[error("I + K is singular (sigma_min = {sigma_min:.3e})")]
    Singular { sigma_min: f64 },

    #[error("upper factor leaks below the diagonal (gp norm {norm:.3e})")]
    SupportLeak { norm: f64 },

    #[error("Picard iteration did not converge after {iterations} sweeps (last change {last_change:.3e})")]
    NoConvergence { iterations: usize, last_change: f64 },

    #[error("invalid argument: {0}")]
    Invalid(String),
}
