//! Cross-distribution statistics at a parameter point: mean gradient, mean
//! Hessian, gradient covariance, pairwise gradient agreement, and the
//! agreement-driven noise scale.

use crate::error::{CoreError, Result};
use crate::linalg::{psd_min_pivot, Matrix};
use crate::params::ParamSet;
use crate::problems::Environment;

/// Norm below which a gradient is treated as degenerate in cosine terms.
const COSINE_NORM_FLOOR: f64 = 1e-12;

/// Summary of a finite environment set at one point. Uniform weights and
/// divisor `K` throughout: these are population-style statistics over the
/// given environments, not sample estimators.
#[derive(Clone, Debug)]
pub struct EnvStats {
    /// Mean gradient over environments (flattened coordinates).
    pub g_bar: Vec<f64>,
    /// Mean Hessian; `None` when any environment lacks an exact Hessian.
    pub h_bar: Option<Matrix>,
    /// Gradient covariance `mean((g_e - g_bar)(g_e - g_bar)^T)`.
    pub sigma_g: Matrix,
    /// Average pairwise cosine similarity of the per-environment gradients.
    pub agreement: f64,
    /// Environment count.
    pub k: usize,
    /// Per-environment flattened gradients, in environment order.
    pub per_env_grads: Vec<Vec<f64>>,
}

impl EnvStats {
    /// Recompute the covariance from the stored gradients (consistency probe).
    pub fn recompute_sigma_g(&self) -> Matrix {
        covariance_with_divisor_k(&self.per_env_grads, &self.g_bar)
    }

    /// Tolerant positive-semidefiniteness check on the covariance.
    pub fn sigma_g_is_psd(&self) -> bool {
        psd_min_pivot(&self.sigma_g) >= -1e-10
    }
}

/// Cross-distribution statistics of `envs` at `theta`.
///
/// Needs at least two environments. `h_bar` is included only when every
/// environment provides an exact Hessian.
pub fn env_stats(envs: &[&dyn Environment], theta: &ParamSet) -> Result<EnvStats> {
    let k = envs.len();
    if k < 2 {
        return Err(CoreError::TooFewEnvironments { got: k });
    }
    let per_env_grads: Vec<Vec<f64>> = envs.iter().map(|e| e.grad(theta).flatten()).collect();
    let d = per_env_grads[0].len();

    let g_bar = mean_vectors(&per_env_grads, d);
    let sigma_g = covariance_with_divisor_k(&per_env_grads, &g_bar);

    let hessians: Option<Vec<Matrix>> = envs.iter().map(|e| e.hessian(theta)).collect();
    let h_bar = hessians.map(|hs| mean_matrices(&hs));

    let agreement = gradient_agreement(&per_env_grads);

    Ok(EnvStats {
        g_bar,
        h_bar,
        sigma_g,
        agreement,
        k,
        per_env_grads,
    })
}

/// Mean of equal-length vectors; identical inputs short-circuit to the shared
/// value so duplicated environments yield an exactly zero covariance.
fn mean_vectors(vs: &[Vec<f64>], d: usize) -> Vec<f64> {
    if vs.iter().all(|v| *v == vs[0]) {
        return vs[0].clone();
    }
    let mut mean = vec![0.0; d];
    for v in vs {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let k = vs.len() as f64;
    for m in mean.iter_mut() {
        *m /= k;
    }
    mean
}

/// Mean of equally shaped matrices, with the same duplicate short-circuit so
/// a constant per-environment Hessian averages to itself bit-for-bit.
fn mean_matrices(hs: &[Matrix]) -> Matrix {
    if hs.iter().all(|h| *h == hs[0]) {
        return hs[0].clone();
    }
    let mut acc = hs[0].clone();
    for h in &hs[1..] {
        acc = acc.add(h);
    }
    acc.scaled(1.0 / hs.len() as f64)
}

fn covariance_with_divisor_k(grads: &[Vec<f64>], g_bar: &[f64]) -> Matrix {
    let d = g_bar.len();
    let mut sigma = Matrix::zeros(d, d);
    for g in grads {
        for i in 0..d {
            let di = g[i] - g_bar[i];
            if di == 0.0 {
                continue;
            }
            for j in 0..d {
                sigma[(i, j)] += di * (g[j] - g_bar[j]);
            }
        }
    }
    sigma.scaled(1.0 / grads.len() as f64)
}

/// Average pairwise cosine similarity `2/(K(K-1)) * sum_{i<j} cos(g_i, g_j)`.
///
/// Pairs where either norm is below 1e-12 contribute 0 (neither agreement
/// nor conflict), keeping the fixed `K(K-1)/2` denominator. Bitwise-equal
/// pairs short-circuit to exactly 1, so duplicated environments produce an
/// agreement of exactly 1 and a noise scale of exactly 0.
pub fn gradient_agreement(grads: &[Vec<f64>]) -> f64 {
    assert!(grads.len() >= 2, "agreement needs at least two gradients");
    let norms: Vec<f64> = grads
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let k = grads.len();
    let mut acc = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            if norms[i] <= COSINE_NORM_FLOOR || norms[j] <= COSINE_NORM_FLOOR {
                continue;
            }
            if grads[i] == grads[j] {
                acc += 1.0;
                continue;
            }
            let dot: f64 = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
            acc += (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
        }
    }
    acc * 2.0 / (k * (k - 1)) as f64
}

/// Noise scale `beta = gamma * (1 - S)`: zero when gradients fully agree, up
/// to `2 gamma` under full conflict.
pub fn noise_scale(agreement: f64, gamma: f64) -> f64 {
    debug_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&agreement));
    debug_assert!(gamma >= 0.0);
    gamma * (1.0 - agreement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{pd_solve, SymPd};
    use crate::problems::{as_dyn, quadratic_envs, QuadraticFamily};
    use crate::problems::{gaussian_domain_envs, GaussianDomainSpec};

    fn flat_env_stats(envs: &[&dyn Environment], theta: &[f64]) -> EnvStats {
        env_stats(envs, &ParamSet::vector("theta", theta.to_vec())).unwrap()
    }

    #[test]
    fn quadratic_family_stats_at_origin() {
        let a = SymPd::new(Matrix::diag(&[0.05, 0.05])).unwrap();
        let fam = QuadraticFamily::new(a, vec![vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let envs = quadratic_envs(&fam);
        let refs = as_dyn(&envs);
        let stats = flat_env_stats(&refs, &[0.0, 0.0]);
        assert_eq!(stats.g_bar, vec![0.0, 0.0]);
        assert_eq!(stats.h_bar.as_ref().unwrap(), &Matrix::diag(&[0.05, 0.05]));
        assert!(stats.sigma_g.max_abs_diff(&Matrix::diag(&[0.0, 1.0])) == 0.0);
        assert!(stats.sigma_g_is_psd());
        // At the population minimizer the covariance is the mean outer
        // product of the linear coefficients, computed either way.
        assert_eq!(stats.sigma_g, fam.sigma_g_closed_form());
        assert_eq!(stats.sigma_g, stats.recompute_sigma_g());
    }

    #[test]
    fn gaussian_domains_covariance_at_the_aggregate_minimum() {
        let envs = gaussian_domain_envs(GaussianDomainSpec::default());
        let refs = as_dyn(&envs);
        let stats = flat_env_stats(&refs, &[0.1, 0.0]);
        assert!(stats.sigma_g.max_abs_diff(&Matrix::diag(&[0.0, 3.24])) <= 1e-10);
        assert!(
            stats
                .h_bar
                .unwrap()
                .max_abs_diff(&Matrix::diag(&[10.0, 4.01]))
                <= 1e-12
        );
    }

    #[test]
    fn duplicated_environments_have_zero_covariance_exactly() {
        let envs = gaussian_domain_envs(GaussianDomainSpec::default());
        let refs: Vec<&dyn Environment> = vec![&envs[0], &envs[0], &envs[0]];
        let stats = flat_env_stats(&refs, &[0.3, -0.2]);
        assert_eq!(stats.sigma_g, Matrix::zeros(2, 2));
        assert_eq!(stats.agreement, 1.0);
    }

    #[test]
    fn too_few_environments_is_an_error() {
        let envs = gaussian_domain_envs(GaussianDomainSpec::default());
        let refs: Vec<&dyn Environment> = vec![&envs[0]];
        let err = env_stats(&refs, &ParamSet::vector("t", vec![0.0, 0.0])).unwrap_err();
        assert_eq!(err, CoreError::TooFewEnvironments { got: 1 });
    }

    #[test]
    fn agreement_examples() {
        let g = vec![0.3, -0.4, 1.0];
        assert_eq!(gradient_agreement(&[g.clone(), g.clone()]), 1.0);
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        assert!((gradient_agreement(&[g.clone(), neg]) + 1.0).abs() <= 1e-12);

        let e1 = vec![1.0, 0.0];
        let e2 = vec![0.0, 1.0];
        let s = gradient_agreement(&[e1.clone(), e1, e2]);
        assert!((s - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn degenerate_pairs_contribute_zero() {
        let z = vec![0.0, 0.0];
        let g = vec![1.0, 0.0];
        assert_eq!(gradient_agreement(&[z.clone(), g.clone()]), 0.0);
        // (z, g, g): one unit pair out of three.
        assert!((gradient_agreement(&[z, g.clone(), g]) - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn noise_scale_endpoints() {
        assert_eq!(noise_scale(1.0, 0.1), 0.0);
        assert!((noise_scale(0.0, 0.1) - 0.1).abs() <= 1e-15);
        assert!((noise_scale(-1.0, 0.1) - 0.2).abs() <= 1e-15);
    }

    #[test]
    fn h_bar_is_omitted_when_a_hessian_is_missing() {
        struct NoHess;
        impl Environment for NoHess {
            fn id(&self) -> &str {
                "nohess"
            }
            fn loss(&self, _t: &ParamSet) -> f64 {
                0.0
            }
            fn grad(&self, t: &ParamSet) -> ParamSet {
                t.zeros_like()
            }
        }
        let envs = gaussian_domain_envs(GaussianDomainSpec::default());
        let nh = NoHess;
        let refs: Vec<&dyn Environment> = vec![&envs[0], &nh];
        let stats = env_stats(&refs, &ParamSet::vector("t", vec![0.0, 0.0])).unwrap();
        assert!(stats.h_bar.is_none());
    }

    #[test]
    fn trace_identity_between_solve_and_explicit_inverse() {
        let m = Matrix::from_rows(&[vec![1.1, 0.4], vec![-0.2, 0.9]]).unwrap();
        let h_raw = m.transpose().matmul(&m).add(&Matrix::identity(2));
        let h = SymPd::new(h_raw).unwrap();
        let sigma = Matrix::from_rows(&[vec![0.7, 0.1], vec![0.1, 0.3]]).unwrap();
        let via_solve = pd_solve(&h, &sigma).trace();
        let via_inverse = h.inverse().matmul(&sigma).trace();
        assert!((via_solve - via_inverse).abs() <= 1e-9 * via_solve.abs().max(1.0));
    }

    mod agreement_properties {
        use super::*;
        use proptest::prelude::*;

        fn rot3(a: f64, b: f64) -> Vec<Vec<f64>> {
            // Product of two Givens rotations: an orthogonal 3x3.
            let (ca, sa) = (a.cos(), a.sin());
            let (cb, sb) = (b.cos(), b.sin());
            vec![
                vec![ca * cb, -sa, ca * sb],
                vec![sa * cb, ca, sa * sb],
                vec![-sb, 0.0, cb],
            ]
        }

        fn apply(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
            m.iter()
                .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
                .collect()
        }

        proptest! {
            #[test]
            fn rotation_invariance(
                a in -3.0f64..3.0, b in -3.0f64..3.0,
                g1 in proptest::collection::vec(-5.0f64..5.0, 3),
                g2 in proptest::collection::vec(-5.0f64..5.0, 3),
                g3 in proptest::collection::vec(-5.0f64..5.0, 3),
            ) {
                let q = rot3(a, b);
                let before = gradient_agreement(&[g1.clone(), g2.clone(), g3.clone()]);
                let after = gradient_agreement(&[apply(&q, &g1), apply(&q, &g2), apply(&q, &g3)]);
                prop_assert!((before - after).abs() <= 1e-12);
            }

            #[test]
            fn positive_scaling_invariance(
                c in 1e-6f64..1e6,
                g1 in proptest::collection::vec(-5.0f64..5.0, 4),
                g2 in proptest::collection::vec(-5.0f64..5.0, 4),
            ) {
                let scaled: Vec<f64> = g1.iter().map(|x| c * x).collect();
                let before = gradient_agreement(&[g1, g2.clone()]);
                let after = gradient_agreement(&[scaled, g2]);
                prop_assert!((before - after).abs() <= 1e-12);
            }

            #[test]
            fn agreement_stays_in_range(
                g1 in proptest::collection::vec(-5.0f64..5.0, 4),
                g2 in proptest::collection::vec(-5.0f64..5.0, 4),
                g3 in proptest::collection::vec(-5.0f64..5.0, 4),
            ) {
                let s = gradient_agreement(&[g1, g2, g3]);
                prop_assert!((-1.0..=1.0).contains(&s));
            }
        }
    }
}
