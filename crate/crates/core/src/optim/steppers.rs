//! Step rules. The two-pass ascent/descent routine is shared between the SAM
//! and SAGE steppers and the one-pass routine between SGD, SGLD, and the
//! agreement-noise stepper, so the degenerate-configuration equivalences
//! (gamma=0 SAGE vs SAM, sigma=0 SGLD vs SGD) hold bit for bit.

use crate::error::{CoreError, Result};
use crate::optim::{rule_perturbation, BaseOpt, PerturbationRule, RuleKind, SageConfig};
use crate::params::ParamSet;
use crate::problems::Environment;
use crate::rng::{purpose, standard_normal_vec, RunRng};
use crate::stats::{gradient_agreement, noise_scale};

/// Mutable trajectory state owned exclusively by one stepper during a step.
#[derive(Clone, Debug)]
pub struct OptState {
    pub theta: ParamSet,
    pub step: u64,
    pub adam: Option<AdamState>,
}

impl OptState {
    pub fn new(theta: ParamSet) -> Self {
        Self {
            theta,
            step: 0,
            adam: None,
        }
    }
}

/// First/second moment accumulators for the adam-like base optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub t: u64,
}

/// Per-step trajectory record.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub per_env_losses: Vec<f64>,
    pub aggregate_loss: f64,
    /// Pairwise gradient agreement S, when the stepper computes it.
    pub agreement: Option<f64>,
    /// Noise scale beta = gamma (1 - S), when the stepper injects noise.
    pub noise_scale: Option<f64>,
    /// Whole-model L2 norm of the ascent perturbation, when one is taken.
    pub eps_norm: Option<f64>,
    /// Full gradient-evaluation rounds this step performed (each round
    /// evaluates every environment's gradient at one point).
    pub grad_eval_rounds: usize,
}

pub trait Stepper {
    fn name(&self) -> &'static str;

    /// Advance the trajectory by one step. On error the state is unchanged.
    fn step(
        &self,
        state: &mut OptState,
        envs: &[&dyn Environment],
        rng: &RunRng,
        trial: u64,
    ) -> Result<StepReport>;
}

/// Plain SGD on the weighted total gradient.
#[derive(Clone, Debug)]
pub struct SgdStepper {
    pub lr: f64,
    pub env_weights: Option<Vec<f64>>,
}

/// SGD plus constant isotropic gradient noise of standard deviation `sigma`
/// (the learning rate scales the injected noise exactly as it scales the
/// gradient).
#[derive(Clone, Debug)]
pub struct SgldStepper {
    pub lr: f64,
    pub sigma: f64,
    pub env_weights: Option<Vec<f64>>,
}

/// Ascent with the whole-model L2 perturbation, descent from the perturbed
/// gradient.
#[derive(Clone, Debug)]
pub struct SamStepper {
    pub lr: f64,
    pub rho: f64,
    pub env_weights: Option<Vec<f64>>,
}

/// The full seven-phase update: per-environment gradients, agreement and
/// noise scale, ascent perturbation from the weighted total gradient,
/// perturbed-point gradient, agreement-scaled noise injection, and the base
/// optimizer update.
#[derive(Clone, Debug)]
pub struct SageStepper {
    pub cfg: SageConfig,
}

/// The noise mechanism alone: SGD plus agreement-scaled gradient noise, no
/// ascent step. With `gamma = 0` this is bit-identical to [`SgdStepper`].
#[derive(Clone, Debug)]
pub struct SageNoiseStepper {
    pub lr: f64,
    pub gamma: f64,
    pub env_weights: Option<Vec<f64>>,
}

impl Stepper for SgdStepper {
    fn name(&self) -> &'static str {
        "erm"
    }

    fn step(
        &self,
        state: &mut OptState,
        envs: &[&dyn Environment],
        _rng: &RunRng,
        _trial: u64,
    ) -> Result<StepReport> {
        one_pass_step(
            state,
            envs,
            self.env_weights.as_deref(),
            self.lr,
            NoiseMode::None,
            None,
            0,
        )
    }
}

impl Stepper for SgldStepper {
    fn name(&self) -> &'static str {
        "sgld"
    }

    fn step(
        &self,
        state: &mut OptState,
        envs: &[&dyn Environment],
        rng: &RunRng,
        trial: u64,
    ) -> Result<StepReport> {
        one_pass_step(
            state,
            envs,
            self.env_weights.as_deref(),
            self.lr,
            NoiseMode::Constant(self.sigma),
            Some(rng),
            trial,
        )
    }
}

impl Stepper for SageNoiseStepper {
    fn name(&self) -> &'static str {
        "sage_noise"
    }

    fn step(
        &self,
        state: &mut OptState,
        envs: &[&dyn Environment],
        rng: &RunRng,
        trial: u64,
    ) -> Result<StepReport> {
        one_pass_step(
            state,
            envs,
            self.env_weights.as_deref(),
            self.lr,
            NoiseMode::Agreement(self.gamma),
            Some(rng),
            trial,
        )
    }
}

impl Stepper for SamStepper {
    fn name(&self) -> &'static str {
        "sam"
    }

    fn step(
        &self,
        state: &mut OptState,
        envs: &[&dyn Environment],
        rng: &RunRng,
        trial: u64,
    ) -> Result<StepReport> {
        let rule = PerturbationRule::new(RuleKind::SamL2, self.rho)?;
        two_pass_step(
            state,
            envs,
            self.env_weights.as_deref(),
            &rule,
            0.0,
            BaseOpt::Sgd { lr: self.lr },
            rng,
            trial,
        )
    }
}

impl Stepper for SageStepper {
    fn name(&self) -> &'static str {
        "sage"
    }

    fn step(
        &self,
        state: &mut OptState,
        envs: &[&dyn Environment],
        rng: &RunRng,
        trial: u64,
    ) -> Result<StepReport> {
        if envs.len() < 2 {
            return Err(CoreError::TooFewEnvironments { got: envs.len() });
        }
        two_pass_step(
            state,
            envs,
            self.cfg.env_weights.as_deref(),
            &self.cfg.rule,
            self.cfg.gamma,
            self.cfg.base,
            rng,
            trial,
        )
    }
}

enum NoiseMode {
    None,
    /// Fixed standard deviation (SGLD).
    Constant(f64),
    /// Agreement-scaled: beta = gamma (1 - S).
    Agreement(f64),
}

/// Phase 1 of every stepper: per-environment losses and gradients at one
/// point. A non-finite loss aborts the step before any state changes.
fn eval_round(envs: &[&dyn Environment], theta: &ParamSet) -> Result<(Vec<f64>, Vec<ParamSet>)> {
    let mut losses = Vec::with_capacity(envs.len());
    let mut grads = Vec::with_capacity(envs.len());
    for e in envs {
        let l = e.loss(theta);
        if !l.is_finite() {
            return Err(CoreError::NonFiniteLoss);
        }
        losses.push(l);
        grads.push(e.grad(theta));
    }
    Ok((losses, grads))
}

fn resolve_weights(k: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / k as f64; k]),
        Some(w) => {
            if w.len() != k {
                return Err(CoreError::InvalidParameter(format!(
                    "{} environment weights for {k} environments",
                    w.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(CoreError::InvalidParameter(
                    "environment weights must be finite and nonnegative".into(),
                ));
            }
            Ok(w.to_vec())
        }
    }
}

/// Weighted total gradient, accumulated in environment order.
fn total_grad(grads: &[ParamSet], weights: &[f64]) -> ParamSet {
    let mut acc = grads[0].scaled(weights[0]);
    for (g, w) in grads[1..].iter().zip(&weights[1..]) {
        acc = acc.add_scaled(g, *w);
    }
    acc
}

fn weighted_loss(losses: &[f64], weights: &[f64]) -> f64 {
    losses.iter().zip(weights).map(|(l, w)| l * w).sum()
}

fn apply_base(state: &mut OptState, base: BaseOpt, g_final: &ParamSet) {
    match base {
        BaseOpt::Sgd { lr } => {
            state.theta = state.theta.add_scaled(g_final, -lr);
        }
        BaseOpt::AdamLike {
            lr,
            beta1,
            beta2,
            eps,
        } => {
            let d = state.theta.dim();
            let adam = state.adam.get_or_insert_with(|| AdamState {
                m1: vec![0.0; d],
                m2: vec![0.0; d],
                t: 0,
            });
            adam.t += 1;
            let g = g_final.flatten();
            let mut update = vec![0.0; d];
            let bc1 = 1.0 - beta1.powi(adam.t as i32);
            let bc2 = 1.0 - beta2.powi(adam.t as i32);
            for i in 0..d {
                adam.m1[i] = beta1 * adam.m1[i] + (1.0 - beta1) * g[i];
                adam.m2[i] = beta2 * adam.m2[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = adam.m1[i] / bc1;
                let v_hat = adam.m2[i] / bc2;
                update[i] = m_hat / (v_hat.sqrt() + eps);
            }
            let update = state.theta.unflatten_like(&update);
            state.theta = state.theta.add_scaled(&update, -lr);
        }
    }
}

/// Fresh standard normal per flattened coordinate, from the per-(trial,
/// step, purpose) stream.
fn noise_like(theta: &ParamSet, rng: &RunRng, trial: u64, step: u64) -> ParamSet {
    let mut stream = rng.stream(trial, step, purpose::NOISE);
    let xi = standard_normal_vec(&mut stream, theta.dim());
    theta.unflatten_like(&xi)
}

fn one_pass_step(
    state: &mut OptState,
    envs: &[&dyn Environment],
    weights: Option<&[f64]>,
    lr: f64,
    noise: NoiseMode,
    rng: Option<&RunRng>,
    trial: u64,
) -> Result<StepReport> {
    let weights = resolve_weights(envs.len(), weights)?;
    let (losses, grads) = eval_round(envs, &state.theta)?;
    let g_bar = total_grad(&grads, &weights);

    let (agreement, beta) = match noise {
        NoiseMode::None => (None, None),
        NoiseMode::Constant(sigma) => (None, Some(sigma)),
        NoiseMode::Agreement(gamma) => {
            let flat: Vec<Vec<f64>> = grads.iter().map(|g| g.flatten()).collect();
            let s = gradient_agreement(&flat);
            (Some(s), Some(noise_scale(s, gamma)))
        }
    };

    let g_final = match beta {
        Some(b) if b > 0.0 => {
            let xi = noise_like(
                &state.theta,
                rng.expect("noise needs an rng"),
                trial,
                state.step,
            );
            g_bar.add_scaled(&xi, b)
        }
        _ => g_bar,
    };

    apply_base(state, BaseOpt::Sgd { lr }, &g_final);
    state.step += 1;
    Ok(StepReport {
        aggregate_loss: weighted_loss(&losses, &weights),
        per_env_losses: losses,
        agreement,
        noise_scale: beta,
        eps_norm: None,
        grad_eval_rounds: 1,
    })
}

#[allow(clippy::too_many_arguments)]
fn two_pass_step(
    state: &mut OptState,
    envs: &[&dyn Environment],
    weights: Option<&[f64]>,
    rule: &PerturbationRule,
    gamma: f64,
    base: BaseOpt,
    rng: &RunRng,
    trial: u64,
) -> Result<StepReport> {
    let weights = resolve_weights(envs.len(), weights)?;

    // Phase 1: per-environment losses/gradients and the weighted total.
    let (losses, grads) = eval_round(envs, &state.theta)?;
    let g_bar = total_grad(&grads, &weights);

    // Phase 2: agreement and noise scale (needs two environments; with one,
    // as under plain SAM, the noise mechanism is off).
    let (agreement, beta) = if envs.len() >= 2 {
        let flat: Vec<Vec<f64>> = grads.iter().map(|g| g.flatten()).collect();
        let s = gradient_agreement(&flat);
        (Some(s), noise_scale(s, gamma))
    } else {
        (None, 0.0)
    };

    // Phase 3: ascent perturbation from the weighted total gradient. A
    // vanishing gradient leaves nothing to probe; the ascent is skipped.
    let perturbation = match rule_perturbation(&state.theta, &g_bar, rule) {
        Ok(p) => Some(p),
        Err(CoreError::ZeroGradient) => None,
        Err(e) => return Err(e),
    };
    let eps_norm = perturbation.as_ref().map_or(0.0, |p| p.norm());

    // Phase 4: apply the perturbation (skipped exactly when it is zero, so
    // the perturbed point is bit-identical to theta in the degenerate case).
    let theta_pert = match &perturbation {
        Some(p) if !p.all_zero => state.theta.add_scaled(&p.eps, 1.0),
        _ => state.theta.clone(),
    };

    // Phase 5: perturbed-point gradient round.
    let (_pert_losses, pert_grads) = eval_round(envs, &theta_pert)?;
    let g_pert = total_grad(&pert_grads, &weights);

    // Phase 6: clean weights are still in `state`; inject agreement noise.
    let g_final = if beta > 0.0 {
        let xi = noise_like(&state.theta, rng, trial, state.step);
        g_pert.add_scaled(&xi, beta)
    } else {
        g_pert
    };

    // Phase 7: base optimizer update.
    apply_base(state, base, &g_final);
    state.step += 1;
    Ok(StepReport {
        aggregate_loss: weighted_loss(&losses, &weights),
        per_env_losses: losses,
        agreement,
        noise_scale: Some(beta),
        eps_norm: Some(eps_norm),
        grad_eval_rounds: 2,
    })
}
