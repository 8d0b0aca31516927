//! Perturbation rules and step rules: SAM, scale-adaptive, and spectral
//! (Newton–Schulz) ascent perturbations; SGD/SGLD/SAM/SAGE steppers; and the
//! sharpness probe used by the reparameterization experiments.

mod perturb;
mod probe;
mod steppers;

pub use perturb::{
    adaptive_l2_perturbation, nd_to_matrix_dims, rule_perturbation, sam_perturbation,
    spectral_perturbation, Perturbation,
};
pub use probe::{sharpness_probe, sharpness_probe_with_fallback};
pub use steppers::{
    AdamState, OptState, SageNoiseStepper, SageStepper, SamStepper, SgdStepper, SgldStepper,
    StepReport, Stepper,
};

use crate::error::{CoreError, Result};

/// How the ascent perturbation is built from a gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleKind {
    /// Whole-model L2 normalization: `rho * g / ||g||_2`.
    SamL2,
    /// Per-matrix polar factor scaled by the weight norm, with the L2
    /// fallback on vector tensors.
    Spectral,
    /// Element-wise scale-adaptive normalization `rho * t^2 g / ||t g||`
    /// with `t = |theta|`.
    AdaptiveL2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerturbationRule {
    pub kind: RuleKind,
    pub rho: f64,
    /// Newton–Schulz iteration floor; only the spectral rule reads it.
    pub ns_iters: usize,
}

impl PerturbationRule {
    pub fn new(kind: RuleKind, rho: f64) -> Result<Self> {
        if rho <= 0.0 || !rho.is_finite() {
            return Err(CoreError::InvalidParameter(format!(
                "perturbation radius must be positive, got {rho}"
            )));
        }
        Ok(Self {
            kind,
            rho,
            ns_iters: 5,
        })
    }

    pub fn with_ns_iters(mut self, ns_iters: usize) -> Result<Self> {
        if ns_iters < 1 {
            return Err(CoreError::InvalidParameter(
                "ns_iters must be at least 1".into(),
            ));
        }
        self.ns_iters = ns_iters;
        Ok(self)
    }
}

/// Base optimizer applied to the final (possibly noise-injected) gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BaseOpt {
    Sgd {
        lr: f64,
    },
    AdamLike {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl BaseOpt {
    pub fn lr(&self) -> f64 {
        match *self {
            BaseOpt::Sgd { lr } | BaseOpt::AdamLike { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if lr <= 0.0 || !lr.is_finite() {
            return Err(CoreError::InvalidParameter(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        if let BaseOpt::AdamLike {
            beta1, beta2, eps, ..
        } = *self
        {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                return Err(CoreError::InvalidParameter(
                    "adam-like moments need beta in [0,1) and positive eps".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Full SAGE configuration: spectral (or degenerate) ascent rule, the
/// agreement-noise ceiling, the base optimizer, and optional per-environment
/// weights for the total gradient (uniform when absent).
#[derive(Clone, Debug, PartialEq)]
pub struct SageConfig {
    pub rule: PerturbationRule,
    pub gamma: f64,
    pub base: BaseOpt,
    pub env_weights: Option<Vec<f64>>,
}

impl SageConfig {
    pub fn new(rule: PerturbationRule, gamma: f64, base: BaseOpt) -> Result<Self> {
        if gamma < 0.0 || !gamma.is_finite() {
            return Err(CoreError::InvalidParameter(format!(
                "noise ceiling gamma must be nonnegative, got {gamma}"
            )));
        }
        base.validate()?;
        Ok(Self {
            rule,
            gamma,
            base,
            env_weights: None,
        })
    }

    pub fn with_env_weights(mut self, weights: Vec<f64>) -> Self {
        self.env_weights = Some(weights);
        self
    }
}
