use thiserror::Error;

/// Errors produced by model fitting, screening and testing.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Inputs violate a documented precondition (shapes, ranges, NaNs).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Matrix dimensions do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The restricted design is not identifiable (singular on the support).
    #[error("unidentifiable support: {0}")]
    Unidentifiable(String),

    /// A fit is degenerate (e.g. zero residual variance).
    #[error("degenerate fit: {0}")]
    Degenerate(String),

    /// An iterative solver did not converge.
    #[error("{solver} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// A matrix required to be invertible is singular beyond jitter rescue.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A numerical result is out of its valid range (non-finite, complex, ...).
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
