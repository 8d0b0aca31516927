//! Dense small-matrix kernels: norms, products, positive-definite solves,
//! an SVD-based polar oracle, the Newton–Schulz polar iteration, and
//! finite-difference derivatives.
//!
//! Everything here is a pure function of its inputs; values can be shared or
//! moved between threads freely. Matrices are row-major `f64` and sized for
//! desk-scale work (up to ~10^4 entries), not for large or sparse problems.

mod finite_diff;
mod matrix;
mod polar;
mod solve;

pub use finite_diff::{finite_diff_gradient, finite_diff_hessian, FD_GRAD_STEP, FD_HESS_STEP};
pub use matrix::{frobenius_norm, Matrix};
pub use polar::{newton_schulz_polar, svd_polar_oracle, JacobiSvd};
pub use solve::{pd_solve, psd_min_pivot, Cholesky, SymPd};
