//! Experiment drivers shared by the CLI and the acceptance suite: the
//! two-minima trajectory ensemble and the weight-rescaling sharpness sweep.

use crate::error::Result;
use crate::optim::{
    sharpness_probe_with_fallback, OptState, PerturbationRule, RuleKind, SageNoiseStepper,
    SamStepper, SgdStepper, SgldStepper, Stepper,
};
use crate::params::ParamSet;
use crate::problems::{as_dyn, mlp_problem, toy2d_landscape, Toy2dLandscape};
use crate::rng::{purpose, RunRng};

/// Frozen start region for the ensemble: a small box inside the basin of
/// minimum A.
pub const TOY2D_START_CENTER: [f64; 2] = [-0.25, 0.0];
pub const TOY2D_START_JITTER: f64 = 0.15;

#[derive(Clone, Debug)]
pub struct Toy2dEnsembleConfig {
    pub seeds: usize,
    pub steps: usize,
    pub lr: f64,
    /// Agreement-noise ceiling for the sage_noise stepper.
    pub gamma: f64,
    pub rho_sam: f64,
    pub sigma_sgld: f64,
    /// Keep full trajectories for this many leading seeds per stepper.
    pub record_trajectories: usize,
}

impl Default for Toy2dEnsembleConfig {
    fn default() -> Self {
        Self {
            seeds: 100,
            steps: 3000,
            lr: 0.05,
            gamma: 4.0,
            rho_sam: 0.05,
            sigma_sgld: 1e-2,
            record_trajectories: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Toy2dStepperOutcome {
    pub stepper: &'static str,
    pub final_points: Vec<[f64; 2]>,
    pub basins: Vec<char>,
    pub fraction_b: f64,
    /// `(seed index, polyline)` for recorded seeds.
    pub trajectories: Vec<(usize, Vec<[f64; 2]>)>,
}

#[derive(Clone, Debug)]
pub struct Toy2dEnsembleResult {
    pub start_points: Vec<[f64; 2]>,
    pub outcomes: Vec<Toy2dStepperOutcome>,
}

impl Toy2dEnsembleResult {
    pub fn fraction_b(&self, stepper: &str) -> Option<f64> {
        self.outcomes
            .iter()
            .find(|o| o.stepper == stepper)
            .map(|o| o.fraction_b)
    }
}

/// Run the four steppers over the seeded start ensemble and classify each
/// final point by its nearest minimum.
pub fn toy2d_ensemble(cfg: &Toy2dEnsembleConfig, rng: &RunRng) -> Result<Toy2dEnsembleResult> {
    let land = toy2d_landscape();
    let envs = land.envs().to_vec();
    let refs = as_dyn(&envs);

    let start_points: Vec<[f64; 2]> = (0..cfg.seeds)
        .map(|seed| {
            let mut jitter = rng.stream(seed as u64, 0, purpose::START_JITTER);
            let u: f64 = rand::Rng::random(&mut jitter);
            let v: f64 = rand::Rng::random(&mut jitter);
            [
                TOY2D_START_CENTER[0] + TOY2D_START_JITTER * (2.0 * u - 1.0),
                TOY2D_START_CENTER[1] + TOY2D_START_JITTER * (2.0 * v - 1.0),
            ]
        })
        .collect();

    let steppers: Vec<Box<dyn Stepper>> = vec![
        Box::new(SgdStepper {
            lr: cfg.lr,
            env_weights: None,
        }),
        Box::new(SamStepper {
            lr: cfg.lr,
            rho: cfg.rho_sam,
            env_weights: None,
        }),
        Box::new(SgldStepper {
            lr: cfg.lr,
            sigma: cfg.sigma_sgld,
            env_weights: None,
        }),
        Box::new(SageNoiseStepper {
            lr: cfg.lr,
            gamma: cfg.gamma,
            env_weights: None,
        }),
    ];

    let mut outcomes = Vec::with_capacity(steppers.len());
    for stepper in &steppers {
        let mut final_points = Vec::with_capacity(cfg.seeds);
        let mut basins = Vec::with_capacity(cfg.seeds);
        let mut trajectories = Vec::new();
        for (seed, start) in start_points.iter().enumerate() {
            let record = seed < cfg.record_trajectories;
            let mut polyline = if record {
                Vec::with_capacity(cfg.steps + 1)
            } else {
                Vec::new()
            };
            let mut state = OptState::new(ParamSet::vector("theta", start.to_vec()));
            if record {
                polyline.push(*start);
            }
            for _ in 0..cfg.steps {
                stepper.step(&mut state, &refs, rng, seed as u64)?;
                if record {
                    let p = state.theta.flatten();
                    polyline.push([p[0], p[1]]);
                }
            }
            let p = state.theta.flatten();
            let point = [p[0], p[1]];
            basins.push(land.classify_basin(point));
            final_points.push(point);
            if record {
                trajectories.push((seed, polyline));
            }
        }
        let fraction_b = basins.iter().filter(|b| **b == 'B').count() as f64 / cfg.seeds as f64;
        outcomes.push(Toy2dStepperOutcome {
            stepper: stepper.name(),
            final_points,
            basins,
            fraction_b,
            trajectories,
        });
    }

    Ok(Toy2dEnsembleResult {
        start_points,
        outcomes,
    })
}

/// Landscape accessor re-exported for the drivers' callers.
pub fn toy2d() -> Toy2dLandscape {
    toy2d_landscape()
}

#[derive(Clone, Debug)]
pub struct ScaleInvarianceConfig {
    pub mlp_seed: u64,
    pub with_bias: bool,
    pub train_steps: usize,
    pub train_lr: f64,
    /// Probe radius shared by all three rules.
    pub rho: f64,
    pub alpha_grid: Vec<f64>,
}

impl Default for ScaleInvarianceConfig {
    fn default() -> Self {
        Self {
            mlp_seed: 7,
            with_bias: true,
            train_steps: 5000,
            train_lr: 0.1,
            rho: 0.02,
            alpha_grid: vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SharpnessRow {
    pub alpha: f64,
    pub sharpness_sam: f64,
    pub sharpness_adaptive: f64,
    pub sharpness_spectral: f64,
    /// False when the probe fell back to the last training gradient because
    /// the current aggregate gradient was numerically zero.
    pub used_true_gradient: bool,
}

#[derive(Clone, Debug)]
pub struct ScaleInvarianceResult {
    pub rows: Vec<SharpnessRow>,
    pub trained_loss: f64,
    pub final_grad_norm: f64,
}

impl ScaleInvarianceResult {
    pub fn max_min_ratio(&self, pick: impl Fn(&SharpnessRow) -> f64) -> f64 {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for row in &self.rows {
            let v = pick(row);
            min = min.min(v);
            max = max.max(v);
        }
        max / min
    }
}

/// Train the MLP to convergence with full-batch SGD, then measure the
/// sharpness of every rule across the rescaling grid.
pub fn scale_invariance_sweep(cfg: &ScaleInvarianceConfig) -> Result<ScaleInvarianceResult> {
    let problem = mlp_problem(cfg.mlp_seed, cfg.with_bias);
    let envs = problem.class_envs();
    let refs = as_dyn(&envs);

    let mut theta = problem.init_params();
    let mut last_grad = None;
    for _ in 0..cfg.train_steps {
        let g = crate::problems::aggregate_grad(&refs, &theta);
        if g.l2_norm() > 0.0 {
            last_grad = Some(g.clone());
        }
        theta = theta.add_scaled(&g, -cfg.train_lr);
    }
    let trained_loss = crate::problems::aggregate_loss(&refs, &theta);
    let final_grad_norm = crate::problems::aggregate_grad(&refs, &theta).l2_norm();

    let rules = [RuleKind::SamL2, RuleKind::AdaptiveL2, RuleKind::Spectral];
    let mut rows = Vec::with_capacity(cfg.alpha_grid.len());
    for &alpha in &cfg.alpha_grid {
        let theta_alpha = problem.rescale(&theta, alpha);
        // A rescaled fallback keeps the degenerate branch meaningful: the
        // gradient transforms contravariantly under the rescale map.
        let fallback = last_grad
            .as_ref()
            .map(|g| rescale_gradient(&problem, g, alpha));
        let mut values = [0.0; 3];
        let mut used_true = true;
        for (slot, kind) in values.iter_mut().zip(rules) {
            let rule = PerturbationRule::new(kind, cfg.rho)?;
            let (probe, from_current) =
                sharpness_probe_with_fallback(&theta_alpha, &rule, &refs, fallback.as_ref())?;
            *slot = probe;
            used_true &= from_current;
        }
        rows.push(SharpnessRow {
            alpha,
            sharpness_sam: values[0],
            sharpness_adaptive: values[1],
            sharpness_spectral: values[2],
            used_true_gradient: used_true,
        });
    }

    Ok(ScaleInvarianceResult {
        rows,
        trained_loss,
        final_grad_norm,
    })
}

fn rescale_gradient(problem: &crate::problems::MlpProblem, g: &ParamSet, alpha: f64) -> ParamSet {
    // d L / d(a W1) = (1/a) dL/dW1, and symmetrically for W2.
    problem.rescale(g, 1.0 / alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gamma_ensemble_reduces_sage_noise_to_erm() {
        let cfg = Toy2dEnsembleConfig {
            seeds: 6,
            steps: 300,
            gamma: 0.0,
            ..Toy2dEnsembleConfig::default()
        };
        let result = toy2d_ensemble(&cfg, &RunRng::new(9)).unwrap();
        let erm = result.outcomes.iter().find(|o| o.stepper == "erm").unwrap();
        let sage = result
            .outcomes
            .iter()
            .find(|o| o.stepper == "sage_noise")
            .unwrap();
        assert_eq!(erm.final_points, sage.final_points);
        assert_eq!(erm.fraction_b, sage.fraction_b);
    }

    #[test]
    fn starts_inside_basin_b_stay_in_b() {
        // Every stepper launched inside B's basin must finish in B: the
        // deterministic ones descend, the noisy ones have too little noise
        // there (SGLD by scale, agreement noise because S is ~1 near B).
        let land = toy2d_landscape();
        let envs = land.envs().to_vec();
        let refs = as_dyn(&envs);
        let cfg = Toy2dEnsembleConfig::default();
        let steppers: Vec<Box<dyn Stepper>> = vec![
            Box::new(SgdStepper {
                lr: cfg.lr,
                env_weights: None,
            }),
            Box::new(SamStepper {
                lr: cfg.lr,
                rho: cfg.rho_sam,
                env_weights: None,
            }),
            Box::new(SgldStepper {
                lr: cfg.lr,
                sigma: cfg.sigma_sgld,
                env_weights: None,
            }),
            Box::new(SageNoiseStepper {
                lr: cfg.lr,
                gamma: cfg.gamma,
                env_weights: None,
            }),
        ];
        let rng = RunRng::new(0);
        for stepper in &steppers {
            for start in [[0.8, 0.1], [1.1, -0.15], [0.95, 0.0]] {
                let mut state = OptState::new(ParamSet::vector("theta", start.to_vec()));
                for _ in 0..1500 {
                    stepper.step(&mut state, &refs, &rng, 0).unwrap();
                }
                let p = state.theta.flatten();
                assert_eq!(
                    land.classify_basin([p[0], p[1]]),
                    'B',
                    "{} left basin B from {start:?}",
                    stepper.name()
                );
            }
        }
    }
}
