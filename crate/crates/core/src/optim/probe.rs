//! Sharpness probe: the loss increase `L(theta + eps) - L(theta)` on the
//! aggregate loss for a rule-specific ascent perturbation.

use crate::error::{CoreError, Result};
use crate::optim::{rule_perturbation, PerturbationRule};
use crate::params::ParamSet;
use crate::problems::{aggregate_grad, aggregate_loss, Environment};

/// Probe the aggregate loss with the rule's perturbation built from the
/// aggregate gradient at `theta`. Errors with `ZeroGradient` when there is no
/// direction to probe.
pub fn sharpness_probe(
    theta: &ParamSet,
    rule: &PerturbationRule,
    envs: &[&dyn Environment],
) -> Result<f64> {
    let g = aggregate_grad(envs, theta);
    if g.l2_norm() == 0.0 {
        return Err(CoreError::ZeroGradient);
    }
    probe_with_gradient(theta, rule, envs, &g)
}

/// Probe variant for sweep drivers: when the current aggregate gradient is
/// numerically zero (norm <= 1e-12), fall back to a caller-supplied gradient
/// (typically the last nonzero training gradient). Returns the probe value
/// and whether the true current gradient was used.
pub fn sharpness_probe_with_fallback(
    theta: &ParamSet,
    rule: &PerturbationRule,
    envs: &[&dyn Environment],
    fallback: Option<&ParamSet>,
) -> Result<(f64, bool)> {
    let g = aggregate_grad(envs, theta);
    if g.l2_norm() > 1e-12 {
        return Ok((probe_with_gradient(theta, rule, envs, &g)?, true));
    }
    match fallback {
        Some(f) if f.l2_norm() > 0.0 => Ok((probe_with_gradient(theta, rule, envs, f)?, false)),
        _ => Err(CoreError::ZeroGradient),
    }
}

fn probe_with_gradient(
    theta: &ParamSet,
    rule: &PerturbationRule,
    envs: &[&dyn Environment],
    g: &ParamSet,
) -> Result<f64> {
    let perturbation = rule_perturbation(theta, g, rule)?;
    if perturbation.all_zero {
        return Err(CoreError::ZeroGradient);
    }
    let perturbed = theta.add_scaled(&perturbation.eps, 1.0);
    Ok(aggregate_loss(envs, &perturbed) - aggregate_loss(envs, theta))
}
