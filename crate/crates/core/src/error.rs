use thiserror::Error;

/// Errors surfaced by the numerical kernels, problems, and steppers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    /// A matrix or parameter set was constructed with a NaN/Inf entry.
    #[error("non-finite entry at index {index} in {context}")]
    NonFinite { context: &'static str, index: usize },

    /// Shape disagreement between operands.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A gradient with zero norm where a direction is required.
    #[error("zero gradient: perturbation direction is undefined")]
    ZeroGradient,

    /// Cholesky-style factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    /// A loss evaluation returned NaN or Inf.
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,

    /// Guard against O(d^2) finite-difference Hessians on large parameter sets.
    #[error("dimension {dim} exceeds the finite-difference guard ({max})")]
    DimensionTooLarge { dim: usize, max: usize },

    /// Cross-distribution statistics need at least two environments.
    #[error("need at least 2 environments, got {got}")]
    TooFewEnvironments { got: usize },

    /// Invalid argument outside the domain of an operation.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
