//! Symmetric positive-definite matrices and Cholesky-backed solves.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

/// Relative symmetry slack accepted when wrapping a matrix as [`SymPd`].
const SYMMETRY_REL_TOL: f64 = 1e-12;

/// A square symmetric positive-definite matrix, validated on construction:
/// symmetry to a 1e-12 relative tolerance and a successful Cholesky
/// factorization (all pivots strictly positive). The factor is kept so
/// repeated solves skip refactorization.
#[derive(Clone, Debug)]
pub struct SymPd {
    base: Matrix,
    chol: Cholesky,
}

impl SymPd {
    pub fn new(base: Matrix) -> Result<Self> {
        if !base.is_square() {
            return Err(CoreError::ShapeMismatch {
                context: "SymPd::new",
                expected: "square matrix".into(),
                got: format!("{}x{}", base.rows(), base.cols()),
            });
        }
        if !base.is_symmetric(SYMMETRY_REL_TOL) {
            return Err(CoreError::InvalidParameter(
                "matrix is not symmetric within 1e-12 relative tolerance".into(),
            ));
        }
        let chol = Cholesky::factor(&base)?;
        Ok(Self { base, chol })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.rows()
    }

    pub fn trace(&self) -> f64 {
        self.base.trace()
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// Explicit inverse, column by column. Used only where a second
    /// independent route to `H^{-1}` is wanted; prefer [`pd_solve`].
    pub fn inverse(&self) -> Matrix {
        self.chol.solve_matrix(&Matrix::identity(self.dim()))
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = A`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(CoreError::NotPositiveDefinite {
                    index: j,
                    pivot: diag,
                });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut v = a[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n, "pd_solve rhs length mismatch");
        // Forward substitution L y = b.
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[(i, k)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        // Back substitution L^T x = y.
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.l[(k, i)] * y[k];
            }
            y[i] /= self.l[(i, i)];
        }
        y
    }

    pub fn solve_matrix(&self, b: &Matrix) -> Matrix {
        let n = self.l.rows();
        assert_eq!(b.rows(), n, "pd_solve rhs row mismatch");
        let mut out = Matrix::zeros(n, b.cols());
        let mut col = vec![0.0; n];
        for j in 0..b.cols() {
            for i in 0..n {
                col[i] = b[(i, j)];
            }
            let x = self.solve_vec(&col);
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        out
    }
}

/// Solve `H X = B` for positive-definite `H`.
pub fn pd_solve(h: &SymPd, b: &Matrix) -> Matrix {
    h.cholesky().solve_matrix(b)
}

/// Smallest pivot of an LDL^T pass, as a tolerant positive-semidefiniteness
/// probe. A PSD matrix with an (exactly) zero pivot has a zero Schur-
/// complement column, which is treated as an eliminated direction rather
/// than a failure; pivots only slightly negative indicate rounding, not
/// indefiniteness.
pub fn psd_min_pivot(a: &Matrix) -> f64 {
    assert!(a.is_square());
    let n = a.rows();
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let zero_tol = 1e-14 * scale;
    let mut work = a.clone();
    let mut min_pivot = f64::INFINITY;
    for j in 0..n {
        let d = work[(j, j)];
        min_pivot = min_pivot.min(d);
        if d.abs() <= zero_tol {
            continue; // eliminated direction; PSD iff its column is ~zero
        }
        for i in (j + 1)..n {
            let lij = work[(i, j)] / d;
            for k in (j + 1)..n {
                let w = work[(j, k)];
                work[(i, k)] -= lij * w;
            }
        }
    }
    min_pivot
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve_returns_rhs() {
        let h = SymPd::new(Matrix::identity(3)).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![-1.5, 0.0]]).unwrap();
        assert!(pd_solve(&h, &b).max_abs_diff(&b) == 0.0);
    }

    #[test]
    fn diagonal_solve_matches_trace_ratio() {
        // diag(10, 4.01) \ diag(0, 3.24) = diag(0, 3.24/4.01).
        let h = SymPd::new(Matrix::diag(&[10.0, 4.01])).unwrap();
        let b = Matrix::diag(&[0.0, 3.24]);
        let x = pd_solve(&h, &b);
        assert!((x[(0, 0)] - 0.0).abs() < 1e-15);
        assert!((x[(1, 1)] - 3.24 / 4.01).abs() < 1e-12);
        assert!((x.trace() - 0.80798).abs() < 1e-5);
    }

    #[test]
    fn solving_h_by_itself_gives_identity() {
        let m = Matrix::from_rows(&[vec![1.3, -0.2], vec![0.7, 2.1]]).unwrap();
        let h_raw = m.transpose().matmul(&m).add(&Matrix::identity(2));
        let h = SymPd::new(h_raw.clone()).unwrap();
        let x = pd_solve(&h, &h_raw);
        assert!(x.max_abs_diff(&Matrix::identity(2)) <= 1e-12);
    }

    #[test]
    fn roundtrip_residual_is_tiny() {
        let m = Matrix::from_rows(&[
            vec![2.0, 0.3, -0.1],
            vec![-0.4, 1.5, 0.2],
            vec![0.1, 0.6, 1.9],
        ])
        .unwrap();
        let h_raw = m.transpose().matmul(&m).add(&Matrix::identity(3));
        let h = SymPd::new(h_raw.clone()).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![-2.0], vec![0.5]]).unwrap();
        let x = pd_solve(&h, &b);
        let resid = h_raw.matmul(&x).sub(&b).frobenius_norm();
        assert!(resid <= 1e-10 * b.frobenius_norm().max(1e-300));
    }

    #[test]
    fn non_positive_definite_is_reported() {
        let err = SymPd::new(Matrix::diag(&[1.0, -0.5])).unwrap_err();
        assert!(matches!(
            err,
            CoreError::NotPositiveDefinite { index: 1, .. }
        ));
    }

    #[test]
    fn asymmetric_matrix_is_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]).unwrap();
        assert!(SymPd::new(m).is_err());
    }

    #[test]
    fn psd_probe_tolerates_zero_pivots() {
        assert!(psd_min_pivot(&Matrix::diag(&[0.0, 3.24])) >= -1e-10);
        assert!(psd_min_pivot(&Matrix::diag(&[1.0, -1.0])) < -1e-10);
    }
}
