//! Two-domain, two-minima toy landscape on the plane.
//!
//! Each domain's loss is a pair of inverted Gaussian wells plus a shared
//! quadratic confinement. Both domains share the well at minimum B exactly,
//! so their gradients agree there; near minimum A each domain pulls toward
//! its own vertically offset well, so the gradients conflict. The aggregate
//! loss has comparable depths at A and B. All constants were frozen after a
//! one-time numerical search; the unit tests check the qualitative structure
//! (stationarity, agreement contrast, finiteness) rather than any plot.

use crate::linalg::Matrix;
use crate::params::ParamSet;
use crate::problems::Environment;
use crate::stats::gradient_agreement;

/// Depth of each domain's own well near A.
const DEPTH_A: f64 = 1.3;
/// Depth of the shared well at B.
const DEPTH_B: f64 = 1.0;
/// Width of every well.
const WIDTH: f64 = 0.45;
/// Vertical offset of the per-domain wells around A.
const OFFSET_A: f64 = 0.35;
/// Quadratic confinement strength.
const CONFINE: f64 = 0.05;
/// Well centers: domain k's A-well sits at (-1, +/-OFFSET_A), B at (1, 0).
const CENTER_A: [f64; 2] = [-1.0, 0.0];
const CENTER_B: [f64; 2] = [1.0, 0.0];

/// Aggregate-loss minimum locations, refined by Newton iteration from the
/// well centers and frozen here; tests re-verify stationarity.
pub const MINIMUM_A: [f64; 2] = [-0.9792076541732009, 0.0];
pub const MINIMUM_B: [f64; 2] = [0.9800160703707155, 0.0];

#[derive(Clone, Copy, Debug)]
struct Well {
    center: [f64; 2],
    depth: f64,
    width: f64,
}

impl Well {
    fn value(&self, p: [f64; 2]) -> f64 {
        -self.depth * self.gauss(p)
    }

    fn gauss(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }

    fn grad(&self, p: [f64; 2]) -> [f64; 2] {
        let scale = self.depth / (self.width * self.width) * self.gauss(p);
        [
            scale * (p[0] - self.center[0]),
            scale * (p[1] - self.center[1]),
        ]
    }

    fn hessian(&self, p: [f64; 2]) -> Matrix {
        let w2 = self.width * self.width;
        let e = self.depth / w2 * self.gauss(p);
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let mut h = Matrix::zeros(2, 2);
        for i in 0..2 {
            for j in 0..2 {
                let outer = d[i] * d[j] / w2;
                h[(i, j)] = e * (if i == j { 1.0 } else { 0.0 } - outer);
            }
        }
        h
    }
}

#[derive(Clone, Debug)]
pub struct Toy2dEnv {
    id: String,
    wells: [Well; 2],
}

impl Toy2dEnv {
    fn eval(&self, p: [f64; 2]) -> f64 {
        self.wells.iter().map(|w| w.value(p)).sum::<f64>() + CONFINE * (p[0] * p[0] + p[1] * p[1])
    }

    fn eval_grad(&self, p: [f64; 2]) -> [f64; 2] {
        let mut g = [2.0 * CONFINE * p[0], 2.0 * CONFINE * p[1]];
        for w in &self.wells {
            let wg = w.grad(p);
            g[0] += wg[0];
            g[1] += wg[1];
        }
        g
    }

    fn eval_hessian(&self, p: [f64; 2]) -> Matrix {
        let mut h = Matrix::diag(&[2.0 * CONFINE, 2.0 * CONFINE]);
        for w in &self.wells {
            h = h.add(&w.hessian(p));
        }
        h
    }
}

impl Environment for Toy2dEnv {
    fn id(&self) -> &str {
        &self.id
    }

    fn loss(&self, theta: &ParamSet) -> f64 {
        let x = theta.flatten();
        self.eval([x[0], x[1]])
    }

    fn grad(&self, theta: &ParamSet) -> ParamSet {
        let x = theta.flatten();
        let g = self.eval_grad([x[0], x[1]]);
        theta.unflatten_like(&g)
    }

    fn hessian(&self, theta: &ParamSet) -> Option<Matrix> {
        let x = theta.flatten();
        Some(self.eval_hessian([x[0], x[1]]))
    }
}

#[derive(Clone, Debug)]
pub struct Toy2dLandscape {
    envs: Vec<Toy2dEnv>,
}

/// Build the frozen landscape.
pub fn toy2d_landscape() -> Toy2dLandscape {
    let envs = [1.0, -1.0]
        .iter()
        .enumerate()
        .map(|(k, sign)| Toy2dEnv {
            id: format!("domain{}", k + 1),
            wells: [
                Well {
                    center: [CENTER_A[0], CENTER_A[1] + sign * OFFSET_A],
                    depth: DEPTH_A,
                    width: WIDTH,
                },
                Well {
                    center: CENTER_B,
                    depth: DEPTH_B,
                    width: WIDTH,
                },
            ],
        })
        .collect();
    Toy2dLandscape { envs }
}

impl Toy2dLandscape {
    pub fn envs(&self) -> &[Toy2dEnv] {
        &self.envs
    }

    pub fn minimum_a(&self) -> [f64; 2] {
        MINIMUM_A
    }

    pub fn minimum_b(&self) -> [f64; 2] {
        MINIMUM_B
    }

    pub fn aggregate_loss(&self, p: [f64; 2]) -> f64 {
        self.envs.iter().map(|e| e.eval(p)).sum::<f64>() / self.envs.len() as f64
    }

    pub fn aggregate_grad(&self, p: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for e in &self.envs {
            let eg = e.eval_grad(p);
            g[0] += eg[0];
            g[1] += eg[1];
        }
        let k = self.envs.len() as f64;
        [g[0] / k, g[1] / k]
    }

    pub fn aggregate_hessian(&self, p: [f64; 2]) -> Matrix {
        let mut h = Matrix::zeros(2, 2);
        for e in &self.envs {
            h = h.add(&e.eval_hessian(p));
        }
        h.scaled(1.0 / self.envs.len() as f64)
    }

    /// Gradient-agreement field: pairwise cosine of the per-domain gradients.
    pub fn agreement(&self, p: [f64; 2]) -> f64 {
        let grads: Vec<Vec<f64>> = self.envs.iter().map(|e| e.eval_grad(p).to_vec()).collect();
        gradient_agreement(&grads)
    }

    /// Nearest frozen minimum: `'A'` or `'B'`.
    pub fn classify_basin(&self, p: [f64; 2]) -> char {
        let da = (p[0] - MINIMUM_A[0]).hypot(p[1] - MINIMUM_A[1]);
        let db = (p[0] - MINIMUM_B[0]).hypot(p[1] - MINIMUM_B[1]);
        if da <= db {
            'A'
        } else {
            'B'
        }
    }

    /// Newton refinement of a stationary point from a starting guess; used
    /// by tests to confirm the frozen minima and by the one-time search that
    /// produced them.
    pub fn refine_minimum(&self, start: [f64; 2], iters: usize) -> [f64; 2] {
        let mut p = start;
        for _ in 0..iters {
            let g = self.aggregate_grad(p);
            let h = self.aggregate_hessian(p);
            let det = h[(0, 0)] * h[(1, 1)] - h[(0, 1)] * h[(1, 0)];
            if det.abs() < 1e-300 {
                break;
            }
            p[0] -= (h[(1, 1)] * g[0] - h[(0, 1)] * g[1]) / det;
            p[1] -= (-h[(1, 0)] * g[0] + h[(0, 0)] * g[1]) / det;
        }
        p
    }

    /// Mean agreement over a uniform grid covering the disk of given radius;
    /// the grid oracle used by the agreement-contrast tests.
    pub fn disk_agreement_mean(&self, center: [f64; 2], radius: f64, grid: usize) -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for i in 0..grid {
            for j in 0..grid {
                let x = center[0] + radius * (2.0 * (i as f64 + 0.5) / grid as f64 - 1.0);
                let y = center[1] + radius * (2.0 * (j as f64 + 0.5) / grid as f64 - 1.0);
                if (x - center[0]).hypot(y - center[1]) > radius {
                    continue;
                }
                acc += self.agreement([x, y]);
                count += 1;
            }
        }
        acc / count as f64
    }
}
