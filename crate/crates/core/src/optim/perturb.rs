//! Ascent perturbations.

use crate::error::{CoreError, Result};
use crate::linalg::newton_schulz_polar;
use crate::optim::{PerturbationRule, RuleKind};
use crate::params::{ParamSet, TensorKind};

/// A computed perturbation plus a flag marking the degenerate all-zero case
/// (every tensor's gradient vanished, so there was no direction to probe).
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub eps: ParamSet,
    pub all_zero: bool,
}

impl Perturbation {
    pub fn norm(&self) -> f64 {
        self.eps.l2_norm()
    }
}

/// `rho * g / ||g||_2` over the whole flattened model.
pub fn sam_perturbation(g: &ParamSet, rho: f64) -> Result<ParamSet> {
    let norm = g.l2_norm();
    if norm == 0.0 {
        return Err(CoreError::ZeroGradient);
    }
    Ok(g.scaled(rho / norm))
}

/// Spectral perturbation: each matrix tensor `W` with gradient `G != 0` gets
/// `rho * ||W||_F * polar(G)`; vector tensors fall back to the L2-normalized
/// direction; zero-gradient tensors get zero. Never errors; an all-zero
/// gradient is reported through the flag.
pub fn spectral_perturbation(
    theta: &ParamSet,
    g: &ParamSet,
    rho: f64,
    ns_iters: usize,
) -> Perturbation {
    let mut eps = g.clone();
    let mut all_zero = true;
    for (et, (tt, gt)) in eps
        .tensors_mut()
        .zip(theta.tensors().iter().zip(g.tensors()))
    {
        let g_norm = gt.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        if g_norm == 0.0 {
            et.values_mut().fill(0.0);
            continue;
        }
        all_zero = false;
        match tt.kind() {
            TensorKind::Matrix { .. } => {
                let gm = gt.as_matrix().expect("matrix kind");
                let polar = newton_schulz_polar(&gm, ns_iters)
                    .expect("nonzero gradient matrix has a polar factor");
                let w_norm = tt.values().iter().map(|v| v * v).sum::<f64>().sqrt();
                let scale = rho * w_norm;
                for (e, p) in et.values_mut().iter_mut().zip(polar.data()) {
                    *e = scale * p;
                }
            }
            TensorKind::Vector { .. } => {
                let scale = rho / g_norm;
                for (e, gv) in et.values_mut().iter_mut().zip(gt.values()) {
                    *e = scale * gv;
                }
            }
        }
    }
    Perturbation { eps, all_zero }
}

/// Element-wise scale-adaptive perturbation `rho * t^2 g / ||t*g||_2` with
/// `t = |theta|` per coordinate.
pub fn adaptive_l2_perturbation(theta: &ParamSet, g: &ParamSet, rho: f64) -> Result<ParamSet> {
    let t = theta.flatten();
    let gf = g.flatten();
    let mut tg_norm = 0.0;
    for (ti, gi) in t.iter().zip(&gf) {
        let v = ti.abs() * gi;
        tg_norm += v * v;
    }
    let tg_norm = tg_norm.sqrt();
    if tg_norm == 0.0 {
        return Err(CoreError::ZeroGradient);
    }
    let eps: Vec<f64> = t
        .iter()
        .zip(&gf)
        .map(|(ti, gi)| rho * ti * ti * gi / tg_norm)
        .collect();
    Ok(g.unflatten_like(&eps))
}

/// Dispatch on the rule kind. SAM/adaptive rules error with `ZeroGradient`
/// when no direction exists; the spectral rule reports it via the flag.
pub fn rule_perturbation(
    theta: &ParamSet,
    g: &ParamSet,
    rule: &PerturbationRule,
) -> Result<Perturbation> {
    match rule.kind {
        RuleKind::SamL2 => Ok(Perturbation {
            eps: sam_perturbation(g, rule.rho)?,
            all_zero: false,
        }),
        RuleKind::Spectral => Ok(spectral_perturbation(theta, g, rule.rho, rule.ns_iters)),
        RuleKind::AdaptiveL2 => Ok(Perturbation {
            eps: adaptive_l2_perturbation(theta, g, rule.rho)?,
            all_zero: false,
        }),
    }
}

/// Reshape convention for tensors of order three or higher: leading
/// dimensions flatten into rows, the last dimension becomes the columns.
/// This parameter library carries only matrices and vectors, so the
/// convention exists for completeness and is pinned by a unit test.
pub fn nd_to_matrix_dims(dims: &[usize]) -> (usize, usize) {
    assert!(dims.len() >= 2, "need at least two dimensions");
    let cols = *dims.last().unwrap();
    let rows = dims[..dims.len() - 1].iter().product();
    (rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamTensor;

    fn rotation2(theta: f64) -> Vec<f64> {
        vec![theta.cos(), -theta.sin(), theta.sin(), theta.cos()]
    }

    #[test]
    fn sam_unit_normalizes() {
        let g = ParamSet::vector("g", vec![3.0, 4.0]);
        let eps = sam_perturbation(&g, 1.0).unwrap();
        let flat = eps.flatten();
        assert!((flat[0] - 0.6).abs() <= 1e-15);
        assert!((flat[1] - 0.8).abs() <= 1e-15);
    }

    #[test]
    fn sam_norm_equals_rho() {
        let g = ParamSet::vector("g", vec![0.2, -1.7, 0.9]);
        let eps = sam_perturbation(&g, 0.05).unwrap();
        assert!((eps.l2_norm() - 0.05).abs() <= 1e-12);
    }

    #[test]
    fn sam_is_direction_only() {
        let g = ParamSet::vector("g", vec![0.2, -1.7, 0.9]);
        let a = sam_perturbation(&g, 0.05).unwrap();
        let b = sam_perturbation(&g.scaled(10.0), 0.05).unwrap();
        assert!(a.add_scaled(&b, -1.0).l2_norm() <= 1e-15);
    }

    #[test]
    fn sam_zero_gradient_errors() {
        let g = ParamSet::vector("g", vec![0.0, 0.0]);
        assert_eq!(
            sam_perturbation(&g, 0.1).unwrap_err(),
            CoreError::ZeroGradient
        );
    }

    #[test]
    fn spectral_on_identity_weight_and_rotation_gradient() {
        let theta = ParamSet::new(vec![ParamTensor::matrix(
            "w",
            2,
            2,
            vec![1.0, 0.0, 0.0, 1.0],
        )])
        .unwrap();
        let g = theta.unflatten_like(&rotation2(0.7));
        let p = spectral_perturbation(&theta, &g, 0.1, 5);
        assert!(!p.all_zero);
        let expected: Vec<f64> = rotation2(0.7)
            .iter()
            .map(|v| 0.1 * 2f64.sqrt() * v)
            .collect();
        let err: f64 = p
            .eps
            .flatten()
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-12);
    }

    #[test]
    fn spectral_ignores_gradient_scale() {
        let theta = ParamSet::new(vec![ParamTensor::matrix(
            "w",
            2,
            2,
            vec![0.3, 1.0, -0.2, 0.8],
        )])
        .unwrap();
        let g = theta.unflatten_like(&[0.5, -0.1, 0.9, 0.4]);
        let a = spectral_perturbation(&theta, &g, 0.1, 5);
        let b = spectral_perturbation(&theta, &g.scaled(37.0), 0.1, 5);
        assert!(a.eps.add_scaled(&b.eps, -1.0).l2_norm() <= 1e-12);
    }

    #[test]
    fn spectral_commutes_with_layer_rescaling() {
        // W -> a W with G -> G/a multiplies the perturbation by a exactly.
        let theta = ParamSet::new(vec![ParamTensor::matrix(
            "w",
            2,
            2,
            vec![0.3, 1.0, -0.2, 0.8],
        )])
        .unwrap();
        let g = theta.unflatten_like(&[0.5, -0.1, 0.9, 0.4]);
        let alpha = 3.0;
        let base = spectral_perturbation(&theta, &g, 0.1, 5);
        let scaled = spectral_perturbation(&theta.scaled(alpha), &g.scaled(1.0 / alpha), 0.1, 5);
        let expected = base.eps.scaled(alpha);
        assert!(scaled.eps.add_scaled(&expected, -1.0).l2_norm() <= 1e-12);
    }

    #[test]
    fn spectral_vector_fallback_and_zero_tensors() {
        let theta = ParamSet::new(vec![
            ParamTensor::matrix("w", 2, 2, vec![1.0, 0.0, 0.0, 1.0]),
            ParamTensor::vector("b", vec![5.0, 5.0]),
        ])
        .unwrap();
        // Matrix gradient zero, vector gradient (3,4).
        let g = theta.unflatten_like(&[0.0, 0.0, 0.0, 0.0, 3.0, 4.0]);
        let p = spectral_perturbation(&theta, &g, 0.1, 5);
        assert!(!p.all_zero);
        assert_eq!(p.eps.tensor("w").unwrap().values(), &[0.0; 4]);
        let b = p.eps.tensor("b").unwrap().values().to_vec();
        assert!((b[0] - 0.06).abs() <= 1e-15 && (b[1] - 0.08).abs() <= 1e-15);

        let zero = theta.zeros_like();
        let p = spectral_perturbation(&theta, &zero, 0.1, 5);
        assert!(p.all_zero);
        assert_eq!(p.eps.l2_norm(), 0.0);
    }

    #[test]
    fn adaptive_rule_scales_with_parameter_magnitude() {
        let theta = ParamSet::vector("t", vec![2.0, 0.0]);
        let g = ParamSet::vector("t", vec![1.0, 5.0]);
        // t*g = (2, 0); norm 2; eps = rho * (4*1, 0*5) / 2.
        let eps = adaptive_l2_perturbation(&theta, &g, 0.1).unwrap();
        assert!((eps.flatten()[0] - 0.2).abs() <= 1e-15);
        assert_eq!(eps.flatten()[1], 0.0);
        // Zero parameters kill every direction.
        let err =
            adaptive_l2_perturbation(&ParamSet::vector("t", vec![0.0, 0.0]), &g, 0.1).unwrap_err();
        assert_eq!(err, CoreError::ZeroGradient);
    }

    #[test]
    fn nd_reshape_flattens_leading_dims() {
        assert_eq!(nd_to_matrix_dims(&[2, 3, 4]), (6, 4));
        assert_eq!(nd_to_matrix_dims(&[7, 5]), (7, 5));
    }

    #[test]
    fn rho_must_be_positive() {
        assert!(PerturbationRule::new(RuleKind::Spectral, 0.0).is_err());
        assert!(PerturbationRule::new(RuleKind::SamL2, -0.1).is_err());
        assert!(PerturbationRule::new(RuleKind::Spectral, 0.1).is_ok());
    }
}
