//! Central-difference gradient and Hessian oracles used to cross-check every
//! analytic derivative in the problem library.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::params::ParamSet;

/// Default step for first derivatives (truncation/round-off balance).
pub const FD_GRAD_STEP: f64 = 1e-5;
/// Default step for second derivatives.
pub const FD_HESS_STEP: f64 = 1e-4;

/// Coordinate limit for the O(d^2)-evaluation Hessian.
const FD_HESS_MAX_DIM: usize = 200;

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` per flattened
/// coordinate, reshaped to the parameter set's tensors.
pub fn finite_diff_gradient<F>(f: F, theta: &ParamSet, h: f64) -> Result<ParamSet>
where
    F: Fn(&ParamSet) -> f64,
{
    if h <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "finite-difference step must be positive".into(),
        ));
    }
    let mut flat = theta.flatten();
    let mut grad = vec![0.0; flat.len()];
    for i in 0..flat.len() {
        let orig = flat[i];
        flat[i] = orig + h;
        let plus = f(&theta.unflatten_like(&flat));
        flat[i] = orig - h;
        let minus = f(&theta.unflatten_like(&flat));
        flat[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(CoreError::NonFiniteLoss);
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(theta.unflatten_like(&grad))
}

/// Symmetrized second central differences over the flattened coordinates.
/// Exact (up to rounding) for quadratics; guarded at 200 coordinates since it
/// costs O(d^2) loss evaluations.
pub fn finite_diff_hessian<F>(f: F, theta: &ParamSet, h: f64) -> Result<Matrix>
where
    F: Fn(&ParamSet) -> f64,
{
    if h <= 0.0 {
        return Err(CoreError::InvalidParameter(
            "finite-difference step must be positive".into(),
        ));
    }
    let d = theta.dim();
    if d > FD_HESS_MAX_DIM {
        return Err(CoreError::DimensionTooLarge {
            dim: d,
            max: FD_HESS_MAX_DIM,
        });
    }

    let mut flat = theta.flatten();
    let eval = |coords: &[f64], theta: &ParamSet| -> Result<f64> {
        let v = f(&theta.unflatten_like(coords));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CoreError::NonFiniteLoss)
        }
    };

    let f0 = eval(&flat, theta)?;
    let mut hess = Matrix::zeros(d, d);
    for i in 0..d {
        let oi = flat[i];
        flat[i] = oi + h;
        let fp = eval(&flat, theta)?;
        flat[i] = oi - h;
        let fm = eval(&flat, theta)?;
        flat[i] = oi;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let (oi, oj) = (flat[i], flat[j]);
            flat[i] = oi + h;
            flat[j] = oj + h;
            let fpp = eval(&flat, theta)?;
            flat[j] = oj - h;
            let fpm = eval(&flat, theta)?;
            flat[i] = oi - h;
            let fmm = eval(&flat, theta)?;
            flat[j] = oj + h;
            let fmp = eval(&flat, theta)?;
            flat[i] = oi;
            flat[j] = oj;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(theta: &ParamSet) -> f64 {
        // f = theta^T diag(2,1) theta / 2 + (1,-1)^T theta
        let x = theta.flatten();
        0.5 * (2.0 * x[0] * x[0] + x[1] * x[1]) + x[0] - x[1]
    }

    #[test]
    fn quadratic_gradient_at_origin() {
        let theta = ParamSet::vector("theta", vec![0.0, 0.0]);
        let g = finite_diff_gradient(quad, &theta, FD_GRAD_STEP).unwrap();
        let flat = g.flatten();
        assert!((flat[0] - 1.0).abs() <= 1e-8);
        assert!((flat[1] + 1.0).abs() <= 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let theta = ParamSet::vector("theta", vec![0.3, -0.7, 2.0]);
        let g = finite_diff_gradient(|_| 4.25, &theta, FD_GRAD_STEP).unwrap();
        assert!(g.flatten().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn quadratic_hessian_is_recovered() {
        let theta = ParamSet::vector("theta", vec![0.4, -1.2]);
        let h = finite_diff_hessian(quad, &theta, FD_HESS_STEP).unwrap();
        assert!(h.max_abs_diff(&Matrix::diag(&[2.0, 1.0])) <= 1e-6);
    }

    #[test]
    fn dimension_guard_trips() {
        let theta = ParamSet::vector("theta", vec![0.0; 201]);
        let err = finite_diff_hessian(|_| 0.0, &theta, FD_HESS_STEP).unwrap_err();
        assert!(matches!(err, CoreError::DimensionTooLarge { dim: 201, .. }));
    }

    #[test]
    fn non_finite_probe_is_reported() {
        let theta = ParamSet::vector("theta", vec![1.0]);
        let err = finite_diff_gradient(|p| (1.0 - p.flatten()[0]).ln(), &theta, 1e-5);
        assert_eq!(err.unwrap_err(), CoreError::NonFiniteLoss);
    }
}
