//! The quadratic family: per-environment losses `theta^T A theta / 2 +
//! b_e^T theta` sharing one curvature matrix `A`, with linear terms that
//! average to zero. Curvature and gradient covariance decouple here: `A`
//! fixes the Hessian of every environment while `{b_e}` alone fixes the
//! gradient covariance at the population minimizer.

use crate::error::{CoreError, Result};
use crate::linalg::{Matrix, SymPd};
use crate::params::ParamSet;
use crate::problems::Environment;

#[derive(Clone, Debug)]
pub struct QuadraticFamily {
    a: SymPd,
    b_set: Vec<Vec<f64>>,
}

impl QuadraticFamily {
    /// Requires the linear coefficients to average to zero (within 1e-14 per
    /// coordinate); use [`QuadraticFamily::centered`] to subtract the mean.
    pub fn new(a: SymPd, b_set: Vec<Vec<f64>>) -> Result<Self> {
        if b_set.is_empty() {
            return Err(CoreError::InvalidParameter("empty b_set".into()));
        }
        let d = a.dim();
        for b in &b_set {
            if b.len() != d {
                return Err(CoreError::ShapeMismatch {
                    context: "QuadraticFamily::new",
                    expected: format!("{d}-vector"),
                    got: format!("{}-vector", b.len()),
                });
            }
        }
        let n = b_set.len() as f64;
        for i in 0..d {
            let mean: f64 = b_set.iter().map(|b| b[i]).sum::<f64>() / n;
            if mean.abs() > 1e-14 {
                return Err(CoreError::InvalidParameter(format!(
                    "b_set mean is {mean:e} at coordinate {i}; must be 0"
                )));
            }
        }
        Ok(Self { a, b_set })
    }

    /// Builds the family after subtracting the empirical mean from each `b_e`.
    pub fn centered(a: SymPd, mut b_set: Vec<Vec<f64>>) -> Result<Self> {
        if b_set.is_empty() {
            return Err(CoreError::InvalidParameter("empty b_set".into()));
        }
        let d = a.dim();
        let n = b_set.len() as f64;
        for i in 0..d {
            let mean: f64 = b_set.iter().map(|b| b[i]).sum::<f64>() / n;
            for b in b_set.iter_mut() {
                b[i] -= mean;
            }
        }
        Self::new(a, b_set)
    }

    pub fn a(&self) -> &SymPd {
        &self.a
    }

    pub fn b_set(&self) -> &[Vec<f64>] {
        &self.b_set
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn num_envs(&self) -> usize {
        self.b_set.len()
    }

    /// Population risk `theta^T A theta / 2` (the linear terms average out).
    pub fn population_risk(&self, theta: &[f64]) -> f64 {
        let at = self.a.matrix().matvec(theta);
        0.5 * theta.iter().zip(&at).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Gradient covariance at the population minimizer: `mean(b_e b_e^T)`.
    pub fn sigma_g_closed_form(&self) -> Matrix {
        let d = self.dim();
        let mut out = Matrix::zeros(d, d);
        for b in &self.b_set {
            for i in 0..d {
                for j in 0..d {
                    out[(i, j)] += b[i] * b[j];
                }
            }
        }
        out.scaled(1.0 / self.b_set.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticEnv {
    id: String,
    a: Matrix,
    b: Vec<f64>,
}

impl QuadraticEnv {
    pub fn b(&self) -> &[f64] {
        &self.b
    }
}

impl Environment for QuadraticEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn loss(&self, theta: &ParamSet) -> f64 {
        let x = theta.flatten();
        let ax = self.a.matvec(&x);
        0.5 * x.iter().zip(&ax).map(|(t, v)| t * v).sum::<f64>()
            + self.b.iter().zip(&x).map(|(b, t)| b * t).sum::<f64>()
    }

    fn grad(&self, theta: &ParamSet) -> ParamSet {
        let x = theta.flatten();
        let mut g = self.a.matvec(&x);
        for (gi, bi) in g.iter_mut().zip(&self.b) {
            *gi += bi;
        }
        theta.unflatten_like(&g)
    }

    fn hessian(&self, _theta: &ParamSet) -> Option<Matrix> {
        Some(self.a.clone())
    }
}

/// One environment per linear coefficient, each with analytic gradient
/// `A theta + b_e` and constant Hessian `A`.
pub fn quadratic_envs(fam: &QuadraticFamily) -> Vec<QuadraticEnv> {
    fam.b_set
        .iter()
        .enumerate()
        .map(|(k, b)| QuadraticEnv {
            id: format!("env{k}"),
            a: fam.a.matrix().clone(),
            b: b.clone(),
        })
        .collect()
}
