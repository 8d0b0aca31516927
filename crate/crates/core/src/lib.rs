//! Numerical-optimization library built around the SAGE step rule (spectral
//! ascent perturbations via Newton–Schulz polar factors plus gradient-
//! agreement-scaled descent noise), its baselines (SGD, SAM, SGLD), a small
//! dense linear-algebra kernel, closed-form multi-distribution toy problems,
//! and a verification lab that numerically confirms the excess-risk
//! decomposition driving the design.

pub mod error;
pub mod experiments;
pub mod linalg;
pub mod optim;
pub mod params;
pub mod problems;
pub mod rng;
pub mod stats;
pub mod theorylab;

pub use error::{CoreError, Result};
pub use linalg::{Matrix, SymPd};
pub use params::{ParamSet, ParamTensor, TensorKind};
pub use problems::Environment;
pub use stats::EnvStats;
