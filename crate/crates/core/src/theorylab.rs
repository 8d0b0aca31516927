//! Numerical verification lab for the excess-risk decomposition, the
//! flatness/alignment decoupling constructions, and the two-domain
//! motivating example.
//!
//! On the quadratic family the decomposition is exact in expectation: with
//! the empirical minimizer available in closed form and isotropic parameter
//! noise, `E[excess] = tr(Hbar^{-1} Sigma_g)/(2K) + sigma^2 tr(Hbar)/2` with
//! no higher-order remainder, so Monte Carlo means must match the two
//! closed-form terms to statistical accuracy.

use crate::error::{CoreError, Result};
use crate::linalg::{pd_solve, Matrix, SymPd};
use crate::params::ParamSet;
use crate::problems::{
    as_dyn, gaussian_domain_envs, quadratic_envs, Environment, GaussianDomainSpec, QuadraticFamily,
};
use crate::rng::{purpose, standard_normal_vec, RunRng};
use crate::stats::env_stats;

/// `tr(H^{-1} Sigma) / (2K)`.
pub fn alignment_term(h: &SymPd, sigma: &Matrix, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(CoreError::InvalidParameter(
            "alignment term needs K >= 1".into(),
        ));
    }
    if sigma.rows() != h.dim() || !sigma.is_square() {
        return Err(CoreError::ShapeMismatch {
            context: "alignment_term",
            expected: format!("{0}x{0}", h.dim()),
            got: format!("{}x{}", sigma.rows(), sigma.cols()),
        });
    }
    Ok(pd_solve(h, sigma).trace() / (2.0 * k as f64))
}

/// `sigma^2 tr(H) / 2`.
pub fn curvature_term(h: &SymPd, sigma: f64) -> Result<f64> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(CoreError::InvalidParameter(
            "noise scale sigma must be nonnegative".into(),
        ));
    }
    Ok(0.5 * sigma * sigma * h.trace())
}

/// How environments are drawn from the family in each Monte Carlo trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaDistribution {
    /// Uniform over the family's finite `b_set`, with replacement. Keeps the
    /// mean gradient exactly zero and the covariance closed-form.
    UniformOverBSet,
    /// Gaussian coefficients with the covariance matched to the family:
    /// `b = sum_e z_e b_e / sqrt(n)` with iid standard normal `z`.
    GaussianMatched,
}

/// How the per-trial empirical minimizer is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThetaHatMode {
    /// `theta_hat = -A^{-1} g_hat`, exact for the quadratic family.
    ClosedForm,
    /// Gradient descent until `||A theta + g_hat|| <= tol`; validates the
    /// optimizer pipeline end to end.
    SgdToConvergence { lr: f64, max_steps: usize, tol: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    /// Environments sampled per trial.
    pub k: usize,
    /// Isotropic parameter-noise scale applied to the empirical minimizer.
    pub sigma: f64,
    pub trials: usize,
    /// Worker threads; results are bit-identical for any value.
    pub threads: usize,
    pub meta: MetaDistribution,
    pub theta_hat: ThetaHatMode,
}

impl McConfig {
    pub fn new(k: usize, sigma: f64, trials: usize) -> Self {
        Self {
            k,
            sigma,
            trials,
            threads: 1,
            meta: MetaDistribution::UniformOverBSet,
            theta_hat: ThetaHatMode::ClosedForm,
        }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads.max(1);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(CoreError::InvalidParameter("K must be >= 1".into()));
        }
        if self.trials < 100 {
            return Err(CoreError::InvalidParameter(format!(
                "trials must be >= 100, got {}",
                self.trials
            )));
        }
        if self.sigma < 0.0 || !self.sigma.is_finite() {
            return Err(CoreError::InvalidParameter(
                "sigma must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// One grid cell of the decomposition check.
#[derive(Clone, Debug)]
pub struct DecompositionReport {
    pub k: usize,
    pub sigma: f64,
    pub alignment_term: f64,
    pub curvature_term: f64,
    pub mc_excess_mean: f64,
    pub mc_excess_se: f64,
    pub trials: usize,
}

impl DecompositionReport {
    pub fn closed_form(&self) -> f64 {
        self.alignment_term + self.curvature_term
    }

    /// Three-standard-error agreement gate, with a relative floating-point
    /// guard for zero-variance cells (K=1, sigma=0 makes every trial
    /// identical, so the standard error is exactly zero).
    pub fn within_three_se(&self) -> bool {
        let tol = 3.0 * self.mc_excess_se + 1e-12 * self.closed_form().abs().max(1.0);
        (self.mc_excess_mean - self.closed_form()).abs() <= tol
    }
}

/// Monte Carlo estimate of the expected excess risk of the noisy empirical
/// minimizer over the family's meta-distribution, next to the two
/// closed-form terms computed from `env_stats` + `pd_solve`.
pub fn mc_excess_risk(
    fam: &QuadraticFamily,
    cfg: &McConfig,
    rng: &RunRng,
) -> Result<DecompositionReport> {
    cfg.validate()?;
    let d = fam.dim();

    // Closed-form terms through the statistics pipeline at theta* = 0.
    let envs = quadratic_envs(fam);
    let refs = as_dyn(&envs);
    let stats = env_stats(&refs, &ParamSet::vector("theta", vec![0.0; d]))?;
    let h_bar = SymPd::new(stats.h_bar.clone().expect("quadratic Hessians exist"))?;
    let align = alignment_term(&h_bar, &stats.sigma_g, cfg.k)?;
    let curve = curvature_term(&h_bar, cfg.sigma)?;

    let chol = fam.a().cholesky().clone();
    let b_set = fam.b_set();
    let n_envs = b_set.len();

    let mut excess = vec![0.0f64; cfg.trials];
    let worker = |range: std::ops::Range<usize>, out: &mut [f64]| {
        for (slot, trial) in out.iter_mut().zip(range) {
            let mut g_hat = vec![0.0; d];
            let mut meta_rng = rng.stream(trial as u64, 0, purpose::META_SAMPLE);
            match cfg.meta {
                MetaDistribution::UniformOverBSet => {
                    for _ in 0..cfg.k {
                        let idx = rand::Rng::random_range(&mut meta_rng, 0..n_envs);
                        for (g, b) in g_hat.iter_mut().zip(&b_set[idx]) {
                            *g += b;
                        }
                    }
                }
                MetaDistribution::GaussianMatched => {
                    let root_n = (n_envs as f64).sqrt();
                    for _ in 0..cfg.k {
                        let z = standard_normal_vec(&mut meta_rng, n_envs);
                        for (e, ze) in z.iter().enumerate() {
                            for (g, b) in g_hat.iter_mut().zip(&b_set[e]) {
                                *g += ze * b / root_n;
                            }
                        }
                    }
                }
            }
            for g in g_hat.iter_mut() {
                *g /= cfg.k as f64;
            }

            let theta_hat: Vec<f64> = match cfg.theta_hat {
                ThetaHatMode::ClosedForm => chol.solve_vec(&g_hat).iter().map(|x| -x).collect(),
                ThetaHatMode::SgdToConvergence { lr, max_steps, tol } => {
                    let mut theta = vec![0.0; d];
                    for _ in 0..max_steps {
                        let mut grad = fam.a().matrix().matvec(&theta);
                        for (gr, gh) in grad.iter_mut().zip(&g_hat) {
                            *gr += gh;
                        }
                        let norm = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if norm <= tol {
                            break;
                        }
                        for (t, gr) in theta.iter_mut().zip(&grad) {
                            *t -= lr * gr;
                        }
                    }
                    theta
                }
            };

            let deployed: Vec<f64> = if cfg.sigma > 0.0 {
                let mut noise_rng = rng.stream(trial as u64, 0, purpose::PARAM_NOISE);
                let xi = standard_normal_vec(&mut noise_rng, d);
                theta_hat
                    .iter()
                    .zip(&xi)
                    .map(|(t, x)| t + cfg.sigma * x)
                    .collect()
            } else {
                theta_hat
            };

            *slot = fam.population_risk(&deployed);
        }
    };

    if cfg.threads <= 1 {
        worker(0..cfg.trials, &mut excess);
    } else {
        let chunk = cfg.trials.div_ceil(cfg.threads);
        std::thread::scope(|scope| {
            for (c, out) in excess.chunks_mut(chunk).enumerate() {
                let start = c * chunk;
                let range = start..start + out.len();
                scope.spawn(move || worker(range, out));
            }
        });
    }

    // Aggregation in fixed index order, independent of the thread count.
    let mean = pairwise_sum(&excess) / cfg.trials as f64;
    let sq: Vec<f64> = excess.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = if cfg.trials > 1 {
        pairwise_sum(&sq) / (cfg.trials - 1) as f64
    } else {
        0.0
    };
    let se = (var / cfg.trials as f64).sqrt();

    Ok(DecompositionReport {
        k: cfg.k,
        sigma: cfg.sigma,
        alignment_term: align,
        curvature_term: curve,
        mc_excess_mean: mean,
        mc_excess_se: se,
        trials: cfg.trials,
    })
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CounterexampleVariant {
    /// Small average curvature, large inverse-curvature-weighted covariance.
    FlatMisaligned,
    /// The reverse.
    AlignedSharp,
}

impl CounterexampleVariant {
    pub fn label(&self) -> &'static str {
        match self {
            CounterexampleVariant::FlatMisaligned => "flat_misaligned",
            CounterexampleVariant::AlignedSharp => "aligned_sharp",
        }
    }
}

#[derive(Clone, Debug)]
pub struct CounterexampleInstance {
    pub variant: CounterexampleVariant,
    pub m: f64,
    pub family: QuadraticFamily,
    /// `tr(Hbar)`, recomputed through `env_stats`.
    pub tr_h: f64,
    /// `tr(Hbar^{-1} Sigma_g)`, recomputed through `env_stats` + `pd_solve`.
    pub tr_hinv_sigma: f64,
}

/// The two quadratic constructions showing that neither trace bounds the
/// other: both target quantities are recomputed through the statistics
/// pipeline rather than written down.
pub fn build_counterexample(
    m: f64,
    variant: CounterexampleVariant,
) -> Result<CounterexampleInstance> {
    if m <= 1.0 || !m.is_finite() {
        return Err(CoreError::InvalidParameter(format!(
            "counterexample scale M must exceed 1, got {m}"
        )));
    }
    let (lambda, b_set) = match variant {
        CounterexampleVariant::FlatMisaligned => {
            // A = I/(2M); linear terms on the second axis with unit variance.
            (1.0 / (2.0 * m), vec![vec![0.0, 1.0], vec![0.0, -1.0]])
        }
        CounterexampleVariant::AlignedSharp => {
            // A = (M/2) I; first-axis terms with variance 1/2.
            let v = 1.0 / 2f64.sqrt();
            (m / 2.0, vec![vec![v, 0.0], vec![-v, 0.0]])
        }
    };
    let a = SymPd::new(Matrix::diag(&[lambda, lambda]))?;
    let family = QuadraticFamily::new(a, b_set)?;

    let envs = quadratic_envs(&family);
    let refs = as_dyn(&envs);
    let stats = env_stats(&refs, &ParamSet::vector("theta", vec![0.0, 0.0]))?;
    let h_bar_mat = stats.h_bar.clone().expect("quadratic Hessians exist");
    let tr_h = h_bar_mat.trace();
    let h_bar = SymPd::new(h_bar_mat)?;
    let tr_hinv_sigma = pd_solve(&h_bar, &stats.sigma_g).trace();

    let instance = CounterexampleInstance {
        variant,
        m,
        family,
        tr_h,
        tr_hinv_sigma,
    };
    debug_assert!(instance.satisfies_bounds());
    Ok(instance)
}

impl CounterexampleInstance {
    /// The defining inequalities of the variant.
    pub fn satisfies_bounds(&self) -> bool {
        let slack = 1.0 + 1e-12;
        match self.variant {
            CounterexampleVariant::FlatMisaligned => {
                self.tr_h <= slack / self.m && self.tr_hinv_sigma * slack >= self.m
            }
            CounterexampleVariant::AlignedSharp => {
                self.tr_hinv_sigma <= slack / self.m && self.tr_h * slack >= self.m
            }
        }
    }
}

/// Outcome of swapping the family's two degrees of freedom independently.
#[derive(Clone, Debug)]
pub struct DecouplingReport {
    /// Mean Hessian is bitwise unchanged under replacements of the linear
    /// coefficients.
    pub h_bar_fixed_under_b_swaps: bool,
    /// Gradient covariance at the shared minimizer is bitwise unchanged
    /// under replacements of the curvature matrix.
    pub sigma_fixed_under_a_swaps: bool,
    /// Both quantities moved when their own degree of freedom moved.
    pub both_move_when_swapped: bool,
    pub swaps: usize,
}

impl DecouplingReport {
    pub fn all_hold(&self) -> bool {
        self.h_bar_fixed_under_b_swaps
            && self.sigma_fixed_under_a_swaps
            && self.both_move_when_swapped
    }
}

/// Check that the mean Hessian is fixed by the curvature matrix alone and
/// the gradient covariance at the minimizer by the linear coefficients
/// alone, over `swaps` random replacements.
pub fn decoupling_check(
    fam: &QuadraticFamily,
    rng: &RunRng,
    swaps: usize,
) -> Result<DecouplingReport> {
    let d = fam.dim();
    let origin = ParamSet::vector("theta", vec![0.0; d]);
    let base_envs = quadratic_envs(fam);
    let base_stats = env_stats(&as_dyn(&base_envs), &origin)?;
    let base_h = base_stats.h_bar.clone().expect("hessians exist");
    let base_sigma = base_stats.sigma_g.clone();

    let mut h_fixed = true;
    let mut sigma_fixed = true;
    let mut both_move = true;
    for s in 0..swaps {
        let mut stream = rng.stream(s as u64, 0, purpose::PROBE);

        // Fresh linear coefficients, same curvature: Hbar must not move.
        let mut b_set = Vec::with_capacity(fam.num_envs().max(2));
        for _ in 0..fam.num_envs().max(2) {
            b_set.push(standard_normal_vec(&mut stream, d));
        }
        let swapped_b = QuadraticFamily::centered(fam.a().clone(), b_set)?;
        let stats_b = env_stats(&as_dyn(&quadratic_envs(&swapped_b)), &origin)?;
        let h_after_b = stats_b.h_bar.expect("hessians exist");
        h_fixed &= h_after_b == base_h;

        // Fresh curvature, same coefficients: Sigma_g at theta=0 must not
        // move (the gradients there are the coefficients themselves).
        let raw: Vec<f64> = standard_normal_vec(&mut stream, d * d);
        let m = Matrix::new(d, d, raw).expect("finite normals");
        let a_new = SymPd::new(m.transpose().matmul(&m).add(&Matrix::identity(d)))?;
        let swapped_a = QuadraticFamily::new(a_new, fam.b_set().to_vec())?;
        let stats_a = env_stats(&as_dyn(&quadratic_envs(&swapped_a)), &origin)?;
        sigma_fixed &= stats_a.sigma_g == base_sigma;

        // Swapping both moves both (barring a measure-zero collision).
        let both = QuadraticFamily::centered(swapped_a.a().clone(), swapped_b.b_set().to_vec())?;
        let stats_both = env_stats(&as_dyn(&quadratic_envs(&both)), &origin)?;
        both_move &=
            stats_both.h_bar.expect("hessians exist") != base_h && stats_both.sigma_g != base_sigma;
    }

    Ok(DecouplingReport {
        h_bar_fixed_under_b_swaps: h_fixed,
        sigma_fixed_under_a_swaps: sigma_fixed,
        both_move_when_swapped: both_move,
        swaps,
    })
}

/// Every number of the two-domain motivating example, recomputed from the
/// environment definitions (nothing here is hard-coded; tests compare the
/// fields against externally known values).
#[derive(Clone, Debug)]
pub struct MotivatingExampleReport {
    pub h_bar: Matrix,
    pub theta_star: [f64; 2],
    pub per_domain_optima: [[f64; 2]; 2],
    pub grads_at_origin: [[f64; 2]; 2],
    pub sigma_g_at_star: Matrix,
    pub tr_hinv_sigma: f64,
    /// Aggregate-loss increase for a displacement along the invariant
    /// coordinate from the minimizer, evaluated at this delta.
    pub displacement_delta: f64,
    pub loss_increase: f64,
    /// `loss_increase / delta^2`: the curvature coefficient of the sharp
    /// direction (half the leading Hessian eigenvalue).
    pub loss_increase_coefficient: f64,
}

pub fn motivating_example_report() -> Result<MotivatingExampleReport> {
    let envs = gaussian_domain_envs(GaussianDomainSpec::default());
    let refs = as_dyn(&envs);
    let origin = ParamSet::vector("theta", vec![0.0, 0.0]);
    let stats = env_stats(&refs, &origin)?;
    let h_bar = stats.h_bar.clone().expect("gaussian Hessians exist");

    let grads_at_origin = [
        to_pair(&stats.per_env_grads[0]),
        to_pair(&stats.per_env_grads[1]),
    ];

    // theta* solves Hbar theta = -grad_bar(0).
    let h = SymPd::new(h_bar.clone())?;
    let rhs = Matrix::column(&[-stats.g_bar[0], -stats.g_bar[1]]);
    let star = pd_solve(&h, &rhs);
    let theta_star = [star[(0, 0)], star[(1, 0)]];

    let mut per_domain_optima = [[0.0; 2]; 2];
    for (k, env) in envs.iter().enumerate() {
        let hk = SymPd::new(env.hessian_matrix())?;
        let g0 = &stats.per_env_grads[k];
        let opt = pd_solve(&hk, &Matrix::column(&[-g0[0], -g0[1]]));
        per_domain_optima[k] = [opt[(0, 0)], opt[(1, 0)]];
    }

    let star_point = ParamSet::vector("theta", theta_star.to_vec());
    let stats_star = env_stats(&refs, &star_point)?;
    let sigma_g_at_star = stats_star.sigma_g.clone();
    let tr_hinv_sigma = pd_solve(&h, &sigma_g_at_star).trace();

    let delta = 0.1;
    let displaced = ParamSet::vector("theta", vec![theta_star[0] + delta, theta_star[1]]);
    let aggregate = |p: &ParamSet| refs.iter().map(|e| e.loss(p)).sum::<f64>() / refs.len() as f64;
    let loss_increase = aggregate(&displaced) - aggregate(&star_point);

    Ok(MotivatingExampleReport {
        h_bar,
        theta_star,
        per_domain_optima,
        grads_at_origin,
        sigma_g_at_star,
        tr_hinv_sigma,
        displacement_delta: delta,
        loss_increase,
        loss_increase_coefficient: loss_increase / (delta * delta),
    })
}

fn to_pair(v: &[f64]) -> [f64; 2] {
    [v[0], v[1]]
}

/// Non-gating remainder-order probe: the two-domain example perturbed by a
/// small cubic term in the invariant coordinate makes the decomposition
/// inexact; the gap to the alignment term must shrink with K at least as
/// fast as the stated K^{-3/2} order (the symmetric construction actually
/// decays one half-order faster). Expectations over the K sampled domains
/// are exact binomial enumerations, so no Monte Carlo noise enters.
#[derive(Clone, Debug)]
pub struct RemainderCheck {
    pub k_values: Vec<usize>,
    pub gaps: Vec<f64>,
    /// Gap ratios between consecutive K values (factor-4 K steps).
    pub ratios: Vec<f64>,
    /// Every ratio within a factor of 3 of the 4^{3/2} = 8 reference decay.
    pub consistent_with_order: bool,
}

pub fn remainder_spot_check(cubic_coeff: f64, k_values: &[usize]) -> Result<RemainderCheck> {
    let envs = gaussian_domain_envs(GaussianDomainSpec::default());
    let h: Vec<Matrix> = envs.iter().map(|e| e.hessian_matrix()).collect();
    let b: Vec<[f64; 2]> = envs.iter().map(|e| e.linear_term()).collect();
    let c = cubic_coeff;

    // Newton minimizer of j/K L1 + (K-j)/K L2 + c x^3.
    let minimize = |w1: f64| -> [f64; 2] {
        let w2 = 1.0 - w1;
        let mut p = [0.1, 0.0];
        for _ in 0..60 {
            let hx = [
                w1 * h[0][(0, 0)] + w2 * h[1][(0, 0)],
                w1 * h[0][(0, 1)] + w2 * h[1][(0, 1)],
                w1 * h[0][(1, 1)] + w2 * h[1][(1, 1)],
            ];
            let bx = [w1 * b[0][0] + w2 * b[1][0], w1 * b[0][1] + w2 * b[1][1]];
            let g = [
                hx[0] * p[0] + hx[1] * p[1] - bx[0] + 3.0 * c * p[0] * p[0],
                hx[1] * p[0] + hx[2] * p[1] - bx[1],
            ];
            let h00 = hx[0] + 6.0 * c * p[0];
            let det = h00 * hx[2] - hx[1] * hx[1];
            let dx = (hx[2] * g[0] - hx[1] * g[1]) / det;
            let dy = (-hx[1] * g[0] + h00 * g[1]) / det;
            p[0] -= dx;
            p[1] -= dy;
            if dx.abs().max(dy.abs()) <= 1e-15 {
                break;
            }
        }
        p
    };

    let risk = |p: [f64; 2]| -> f64 {
        let theta = ParamSet::vector("theta", p.to_vec());
        let base = envs.iter().map(|e| e.loss(&theta)).sum::<f64>() / 2.0;
        base + c * p[0] * p[0] * p[0]
    };

    let star = minimize(0.5);
    let r_star = risk(star);

    // Alignment term of the perturbed problem at its minimizer.
    let grads: Vec<[f64; 2]> = envs
        .iter()
        .map(|e| {
            let g = e.grad(&ParamSet::vector("theta", star.to_vec())).flatten();
            [g[0] + 3.0 * c * star[0] * star[0], g[1]]
        })
        .collect();
    let g_bar = [
        0.5 * (grads[0][0] + grads[1][0]),
        0.5 * (grads[0][1] + grads[1][1]),
    ];
    let mut sigma = Matrix::zeros(2, 2);
    for g in &grads {
        let d0 = g[0] - g_bar[0];
        let d1 = g[1] - g_bar[1];
        sigma[(0, 0)] += d0 * d0 / 2.0;
        sigma[(0, 1)] += d0 * d1 / 2.0;
        sigma[(1, 0)] += d1 * d0 / 2.0;
        sigma[(1, 1)] += d1 * d1 / 2.0;
    }
    let mut h_bar_star = h[0].add(&h[1]).scaled(0.5);
    h_bar_star[(0, 0)] += 6.0 * c * star[0];
    let h_bar_pd = SymPd::new(h_bar_star)?;

    let mut gaps = Vec::with_capacity(k_values.len());
    for &k in k_values {
        // Exact expectation over the binomial count of domain-1 draws.
        let mut weight = 0.5f64.powi(k as i32);
        let mut expected = 0.0;
        for j in 0..=k {
            let theta_hat = minimize(j as f64 / k as f64);
            expected += weight * (risk(theta_hat) - r_star);
            weight *= (k - j) as f64 / (j + 1) as f64;
        }
        let align = alignment_term(&h_bar_pd, &sigma, k)?;
        gaps.push((expected - align).abs());
    }

    let mut ratios = Vec::new();
    let mut consistent = true;
    for w in gaps.windows(2) {
        let ratio = w[0] / w[1].max(1e-300);
        // Reference decay for a factor-4 step in K at order K^{-3/2}.
        consistent &= (8.0 / 3.0..=24.0).contains(&ratio);
        ratios.push(ratio);
    }

    Ok(RemainderCheck {
        k_values: k_values.to_vec(),
        gaps,
        ratios,
        consistent_with_order: consistent,
    })
}
