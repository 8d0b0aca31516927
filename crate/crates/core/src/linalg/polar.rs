//! Polar factors: the Newton–Schulz iteration used inside the optimizer and a
//! one-sided Jacobi SVD that serves as the exact reference path.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

/// Hard ceiling on Newton–Schulz iterations. The cubic map needs roughly 20
/// iterations to pull a singular value of 2.5e-3 (a 16x16 matrix with
/// condition number 100 after Frobenius normalization) up to 1; 60 leaves
/// ample slack without risking an unbounded loop on rank-deficient input.
const NS_MAX_ITERS: usize = 60;

/// Orthogonal polar factor of `g` via the cubic Newton–Schulz iteration.
///
/// Starts from `X_0 = G / ||G||_F` (which bounds all singular values by 1)
/// and applies `X_{k+1} = X_k (3I - X_k^T X_k) / 2`. `min_iters` iterations
/// are always performed; afterwards the recursion keeps going while the
/// orthogonality residual `||X^T X - I||_F` (restricted to directions the
/// iterate can reach) is still strictly shrinking. The continuation is a
/// deterministic function of `g` alone, so the polar factor of `c*g` equals
/// that of `g` to machine precision for any `c > 0`: the normalization
/// cancels the scale before the first multiply.
///
/// Zero singular values stay exactly zero (the iterate is a polynomial in the
/// normalized input), so rank-deficient gradients yield partial isometries.
pub fn newton_schulz_polar(g: &Matrix, min_iters: usize) -> Result<Matrix> {
    if min_iters < 1 {
        return Err(CoreError::InvalidParameter(
            "newton_schulz_polar requires at least one iteration".into(),
        ));
    }
    let norm = g.frobenius_norm();
    if norm == 0.0 {
        return Err(CoreError::ZeroGradient);
    }

    let mut x = g.scaled(1.0 / norm);
    let mut res = f64::INFINITY;
    for iter in 0..NS_MAX_ITERS {
        let gram = x.transpose().matmul(&x);
        if iter >= min_iters {
            let r = ortho_residual(&gram);
            // Plateau: either converged or blocked by zero singular values.
            if r >= res {
                break;
            }
            res = r;
        }
        x = ns_update(&x, &gram);
    }
    Ok(x)
}

/// One Newton–Schulz step given the precomputed Gram matrix `X^T X`.
fn ns_update(x: &Matrix, gram: &Matrix) -> Matrix {
    let n = gram.rows();
    let mut poly = gram.scaled(-0.5);
    for i in 0..n {
        poly[(i, i)] += 1.5;
    }
    x.matmul(&poly)
}

/// `||X^T X - I||_F` ignoring rows/columns of the Gram matrix that are
/// numerically zero (directions annihilated by a rank-deficient input, which
/// the iteration can never move).
fn ortho_residual(gram: &Matrix) -> f64 {
    let n = gram.rows();
    let mut acc = 0.0;
    for i in 0..n {
        if gram[(i, i)] <= 1e-28 {
            continue;
        }
        for j in 0..n {
            if gram[(j, j)] <= 1e-28 {
                continue;
            }
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram[(i, j)] - target;
            acc += d * d;
        }
    }
    acc.sqrt()
}

/// Exact polar factor `U V^T` from a one-sided Jacobi SVD.
///
/// Reference/oracle path: simple, accurate for small matrices, and
/// self-contained. Columns whose singular value is numerically zero are
/// dropped, matching the partial-isometry convention of the iteration above.
pub fn svd_polar_oracle(g: &Matrix) -> Result<Matrix> {
    if g.frobenius_norm() == 0.0 {
        return Err(CoreError::ZeroGradient);
    }
    // One-sided Jacobi wants at least as many rows as columns; the polar
    // factor transposes cleanly: polar(G^T) = polar(G)^T.
    if g.rows() < g.cols() {
        return Ok(svd_polar_oracle(&g.transpose())?.transpose());
    }
    let svd = JacobiSvd::decompose(g);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = 1e-12 * sigma_max;

    let (m, n) = (g.rows(), g.cols());
    let mut polar = Matrix::zeros(m, n);
    for k in 0..n {
        if svd.singular_values[k] <= cutoff {
            continue;
        }
        for i in 0..m {
            let uik = svd.u[(i, k)];
            for j in 0..n {
                polar[(i, j)] += uik * svd.v[(j, k)];
            }
        }
    }
    Ok(polar)
}

/// Thin SVD `A = U diag(sigma) V^T` of an `m x n` matrix with `m >= n`,
/// computed by cyclic one-sided Jacobi rotations.
pub struct JacobiSvd {
    /// `m x n`, orthonormal columns for nonzero singular values.
    pub u: Matrix,
    /// Length `n`, nonnegative, unsorted.
    pub singular_values: Vec<f64>,
    /// `n x n` orthogonal.
    pub v: Matrix,
}

impl JacobiSvd {
    /// Sweeps until the off-diagonal Frobenius mass of the implicit Gram
    /// matrix falls below `1e-14` of its total, capped at 100 sweeps.
    pub fn decompose(g: &Matrix) -> Self {
        assert!(
            g.rows() >= g.cols(),
            "JacobiSvd wants m >= n; transpose first"
        );
        let (m, n) = (g.rows(), g.cols());
        // Work on columns: a[j] is the j-th column of the evolving matrix.
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..m).map(|i| g[(i, j)]).collect())
            .collect();
        let mut v = Matrix::identity(n);

        let total_mass = g.data().iter().map(|x| x * x).sum::<f64>();
        let tol = 1e-14 * total_mass.max(f64::MIN_POSITIVE);

        for _sweep in 0..100 {
            let mut off_mass = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                    let beta: f64 = a[q].iter().map(|x| x * x).sum();
                    let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                    off_mass += gamma * gamma;
                    if gamma == 0.0 || gamma.abs() <= 1e-30 * (alpha * beta).sqrt() {
                        continue;
                    }
                    // Jacobi rotation zeroing the (p,q) entry of A^T A.
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    let (left, right) = a.split_at_mut(q);
                    for (ap, aq) in left[p].iter_mut().zip(right[0].iter_mut()) {
                        let (vp, vq) = (*ap, *aq);
                        *ap = c * vp - s * vq;
                        *aq = s * vp + c * vq;
                    }
                    for i in 0..n {
                        let vp = v[(i, p)];
                        let vq = v[(i, q)];
                        v[(i, p)] = c * vp - s * vq;
                        v[(i, q)] = s * vp + c * vq;
                    }
                }
            }
            if off_mass.sqrt() <= tol {
                break;
            }
        }

        let mut u = Matrix::zeros(m, n);
        let mut singular_values = vec![0.0; n];
        for j in 0..n {
            let sigma = a[j].iter().map(|x| x * x).sum::<f64>().sqrt();
            singular_values[j] = sigma;
            if sigma > 0.0 {
                for i in 0..m {
                    u[(i, j)] = a[j][i] / sigma;
                }
            }
        }
        Self {
            u,
            singular_values,
            v,
        }
    }
}
