//! Concrete multi-distribution learning problems: the quadratic family, the
//! two-domain Gaussian task with closed-form population losses, a small MLP
//! on synthetic circles, and a two-minima toy landscape.

mod gaussian;
mod mlp;
mod quadratic;
mod toy2d;

pub use gaussian::{gaussian_domain_envs, GaussianDomainEnv, GaussianDomainSpec};
pub use mlp::{mlp_problem, MlpEnv, MlpProblem};
pub use quadratic::{quadratic_envs, QuadraticEnv, QuadraticFamily};
pub use toy2d::{toy2d_landscape, Toy2dEnv, Toy2dLandscape, MINIMUM_A, MINIMUM_B};

use std::cell::Cell;

use crate::linalg::Matrix;
use crate::params::ParamSet;

/// One training distribution: loss, analytic gradient, and (where available)
/// the exact Hessian in flattened coordinates, all pure functions of the
/// parameter point.
pub trait Environment {
    fn id(&self) -> &str;
    fn loss(&self, theta: &ParamSet) -> f64;
    fn grad(&self, theta: &ParamSet) -> ParamSet;
    /// Exact d x d Hessian over flattened coordinates, if the problem has one
    /// in closed form.
    fn hessian(&self, _theta: &ParamSet) -> Option<Matrix> {
        None
    }
}

/// Borrow a slice of concrete environments as trait objects.
pub fn as_dyn<E: Environment>(envs: &[E]) -> Vec<&dyn Environment> {
    envs.iter().map(|e| e as &dyn Environment).collect()
}

/// Instrumented wrapper counting loss and gradient evaluations; used to
/// assert per-step pass counts.
pub struct CountingEnv<'a> {
    inner: &'a dyn Environment,
    loss_calls: Cell<usize>,
    grad_calls: Cell<usize>,
}

impl<'a> CountingEnv<'a> {
    pub fn new(inner: &'a dyn Environment) -> Self {
        Self {
            inner,
            loss_calls: Cell::new(0),
            grad_calls: Cell::new(0),
        }
    }

    pub fn loss_calls(&self) -> usize {
        self.loss_calls.get()
    }

    pub fn grad_calls(&self) -> usize {
        self.grad_calls.get()
    }

    pub fn reset(&self) {
        self.loss_calls.set(0);
        self.grad_calls.set(0);
    }
}

impl Environment for CountingEnv<'_> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn loss(&self, theta: &ParamSet) -> f64 {
        self.loss_calls.set(self.loss_calls.get() + 1);
        self.inner.loss(theta)
    }

    fn grad(&self, theta: &ParamSet) -> ParamSet {
        self.grad_calls.set(self.grad_calls.get() + 1);
        self.inner.grad(theta)
    }

    fn hessian(&self, theta: &ParamSet) -> Option<Matrix> {
        self.inner.hessian(theta)
    }
}

/// Uniform-average loss over a set of environments.
pub fn aggregate_loss(envs: &[&dyn Environment], theta: &ParamSet) -> f64 {
    let k = envs.len() as f64;
    envs.iter().map(|e| e.loss(theta)).sum::<f64>() / k
}

/// Uniform-average gradient over a set of environments.
pub fn aggregate_grad(envs: &[&dyn Environment], theta: &ParamSet) -> ParamSet {
    let k = envs.len() as f64;
    let mut acc = envs[0].grad(theta);
    for e in &envs[1..] {
        acc = acc.add_scaled(&e.grad(theta), 1.0);
    }
    acc.scaled(1.0 / k)
}
