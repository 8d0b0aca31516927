//! `train`: run any stepper on any of the library problems, logging one
//! record per step and serializing the final parameters.
//!
//! Deterministic outputs (`run_record.csv`, snapshots, manifest, resolved
//! config) are byte-identical across re-runs with the same config and seed;
//! per-step wall times go to a separate `timings.csv` that is exempt from
//! that contract.

use std::time::Instant;

use sage_core::experiments::TOY2D_START_CENTER;
use sage_core::optim::{
    AdamState, BaseOpt, OptState, PerturbationRule, RuleKind, SageConfig, SageNoiseStepper,
    SageStepper, SamStepper, SgdStepper, SgldStepper, Stepper,
};
use sage_core::params::{ParamSet, ParamTensor};
use sage_core::problems::{
    gaussian_domain_envs, mlp_problem, quadratic_envs, toy2d_landscape, Environment,
    GaussianDomainSpec,
};
use sage_core::rng::RunRng;
use sage_core::theorylab::{build_counterexample, CounterexampleVariant};

use crate::commands::{default_out, Overrides};
use crate::config::SectionEmitter;
use crate::csvio::CsvFile;
use crate::snapshot::{read_snapshot, write_snapshot};
use crate::{load_raw_config, CliError, Outcome, RunContext};

const SECTION: &str = "train";

/// Reserved tensor names carrying optimizer state inside resume checkpoints.
const STEP_TENSOR: &str = "__step";
const ADAM_M1_TENSOR: &str = "__adam_m1";
const ADAM_M2_TENSOR: &str = "__adam_m2";

#[derive(Clone, Debug)]
pub struct Config {
    pub seed: u64,
    pub out: std::path::PathBuf,
    pub problem: String,
    pub stepper: String,
    pub steps: usize,
    pub lr: f64,
    pub rho: f64,
    pub gamma: f64,
    pub ns_iters: usize,
    pub sigma_sgld: f64,
    pub base: String,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub m: f64,
    pub mlp_seed: u64,
    pub with_bias: bool,
    pub checkpoint_every: usize,
    pub resume: Option<std::path::PathBuf>,
}

impl Config {
    pub fn resolve(overrides: &Overrides) -> Result<Self, CliError> {
        let raw = load_raw_config(overrides.config.as_deref())?;
        let mut reader = raw.reader(SECTION);
        let out_from_config = reader.take_raw("out");
        let cfg = Config {
            seed: overrides.seed.unwrap_or(reader.take("seed", 42u64)?),
            out: overrides
                .out
                .clone()
                .or(out_from_config.map(Into::into))
                .unwrap_or_else(|| default_out(SECTION)),
            problem: reader.take_choice(
                "problem",
                &["two-domain", "quadratic", "mlp", "toy2d"],
                "two-domain",
            )?,
            stepper: reader.take_choice(
                "stepper",
                &["sage", "erm", "sam", "sgld", "sage_noise"],
                "sage",
            )?,
            steps: reader.take("steps", 2000usize)?,
            lr: reader.take("lr", 0.05f64)?,
            rho: reader.take("rho", 0.05f64)?,
            gamma: reader.take("gamma", 0.1f64)?,
            ns_iters: reader.take("ns_iters", 5usize)?,
            sigma_sgld: reader.take("sigma_sgld", 0.01f64)?,
            base: reader.take_choice("base", &["sgd", "adam"], "sgd")?,
            beta1: reader.take("beta1", 0.9f64)?,
            beta2: reader.take("beta2", 0.999f64)?,
            adam_eps: reader.take("adam_eps", 1e-8f64)?,
            m: reader.take("m", 10.0f64)?,
            mlp_seed: reader.take("mlp_seed", 7u64)?,
            with_bias: reader.take("with_bias", true)?,
            resume: reader.take_raw("resume").map(Into::into),
            checkpoint_every: reader.take("checkpoint_every", 0usize)?,
        };
        reader.finish()?;
        if cfg.steps == 0 || cfg.lr <= 0.0 || cfg.rho <= 0.0 || cfg.gamma < 0.0 {
            return Err(CliError::config(format!(
                "[{SECTION}] steps, lr, rho must be positive and gamma nonnegative"
            )));
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        let mut e = SectionEmitter::new(SECTION);
        e.kv("seed", self.seed)
            .kv("out", self.out.display())
            .kv("problem", &self.problem)
            .kv("stepper", &self.stepper)
            .kv("steps", self.steps)
            .kv("lr", self.lr)
            .kv("rho", self.rho)
            .kv("gamma", self.gamma)
            .kv("ns_iters", self.ns_iters)
            .kv("sigma_sgld", self.sigma_sgld)
            .kv("base", &self.base)
            .kv("beta1", self.beta1)
            .kv("beta2", self.beta2)
            .kv("adam_eps", self.adam_eps)
            .kv("m", self.m)
            .kv("mlp_seed", self.mlp_seed)
            .kv("with_bias", self.with_bias)
            .kv("checkpoint_every", self.checkpoint_every);
        if let Some(resume) = &self.resume {
            e.kv("resume", resume.display());
        }
        e.into_string()
    }

    fn base_opt(&self) -> BaseOpt {
        match self.base.as_str() {
            "adam" => BaseOpt::AdamLike {
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.adam_eps,
            },
            _ => BaseOpt::Sgd { lr: self.lr },
        }
    }

    fn build_stepper(&self) -> Result<Box<dyn Stepper>, CliError> {
        Ok(match self.stepper.as_str() {
            "erm" => Box::new(SgdStepper {
                lr: self.lr,
                env_weights: None,
            }),
            "sam" => Box::new(SamStepper {
                lr: self.lr,
                rho: self.rho,
                env_weights: None,
            }),
            "sgld" => Box::new(SgldStepper {
                lr: self.lr,
                sigma: self.sigma_sgld,
                env_weights: None,
            }),
            "sage_noise" => Box::new(SageNoiseStepper {
                lr: self.lr,
                gamma: self.gamma,
                env_weights: None,
            }),
            _ => Box::new(SageStepper {
                cfg: SageConfig::new(
                    PerturbationRule::new(RuleKind::Spectral, self.rho)?
                        .with_ns_iters(self.ns_iters)?,
                    self.gamma,
                    self.base_opt(),
                )?,
            }),
        })
    }
}

/// The selected problem's environments and initial parameter point.
struct ProblemSetup {
    envs: Vec<Box<dyn Environment>>,
    theta0: ParamSet,
}

fn build_problem(cfg: &Config) -> Result<ProblemSetup, CliError> {
    match cfg.problem.as_str() {
        "quadratic" => {
            let fam = build_counterexample(cfg.m, CounterexampleVariant::FlatMisaligned)?.family;
            let envs: Vec<Box<dyn Environment>> = quadratic_envs(&fam)
                .into_iter()
                .map(|e| Box::new(e) as Box<dyn Environment>)
                .collect();
            Ok(ProblemSetup {
                envs,
                theta0: ParamSet::vector("theta", vec![1.0, 1.0]),
            })
        }
        "mlp" => {
            let problem = mlp_problem(cfg.mlp_seed, cfg.with_bias);
            let theta0 = problem.init_params();
            let envs: Vec<Box<dyn Environment>> = problem
                .class_envs()
                .into_iter()
                .map(|e| Box::new(e) as Box<dyn Environment>)
                .collect();
            Ok(ProblemSetup { envs, theta0 })
        }
        "toy2d" => {
            let land = toy2d_landscape();
            let envs: Vec<Box<dyn Environment>> = land
                .envs()
                .iter()
                .cloned()
                .map(|e| Box::new(e) as Box<dyn Environment>)
                .collect();
            Ok(ProblemSetup {
                envs,
                theta0: ParamSet::vector("theta", TOY2D_START_CENTER.to_vec()),
            })
        }
        _ => {
            let envs: Vec<Box<dyn Environment>> =
                gaussian_domain_envs(GaussianDomainSpec::default())
                    .into_iter()
                    .map(|e| Box::new(e) as Box<dyn Environment>)
                    .collect();
            Ok(ProblemSetup {
                envs,
                theta0: ParamSet::vector("theta", vec![0.0, 0.0]),
            })
        }
    }
}

/// Checkpoint layout: the model tensors plus reserved state tensors.
fn checkpoint_params(state: &OptState) -> ParamSet {
    let mut tensors: Vec<ParamTensor> = state.theta.tensors().to_vec();
    tensors.push(ParamTensor::vector(STEP_TENSOR, vec![state.step as f64]));
    if let Some(adam) = &state.adam {
        tensors.push(ParamTensor::vector(ADAM_M1_TENSOR, adam.m1.clone()));
        tensors.push(ParamTensor::vector(ADAM_M2_TENSOR, adam.m2.clone()));
    }
    ParamSet::new(tensors).expect("checkpoint tensors are non-empty")
}

fn restore_state(checkpoint: &ParamSet, template: &ParamSet) -> Result<OptState, CliError> {
    let step_tensor = checkpoint
        .tensor(STEP_TENSOR)
        .ok_or_else(|| CliError::config("checkpoint is missing the step tensor"))?;
    let step = step_tensor.values()[0] as u64;

    let mut model_tensors = Vec::new();
    for tensor in template.tensors() {
        let found = checkpoint.tensor(tensor.name()).ok_or_else(|| {
            CliError::config(format!("checkpoint is missing tensor {:?}", tensor.name()))
        })?;
        if found.kind() != tensor.kind() {
            return Err(CliError::config(format!(
                "checkpoint tensor {:?} has the wrong shape",
                tensor.name()
            )));
        }
        model_tensors.push(found.clone());
    }
    let theta = ParamSet::new(model_tensors)?;
    let adam = match (
        checkpoint.tensor(ADAM_M1_TENSOR),
        checkpoint.tensor(ADAM_M2_TENSOR),
    ) {
        (Some(m1), Some(m2)) => Some(AdamState {
            m1: m1.values().to_vec(),
            m2: m2.values().to_vec(),
            t: step,
        }),
        _ => None,
    };
    Ok(OptState { theta, step, adam })
}

pub fn run(overrides: &Overrides) -> Result<Outcome, CliError> {
    let cfg = Config::resolve(overrides)?;
    let ctx = RunContext::prepare(cfg.out.clone(), cfg.seed)?;
    ctx.write_run_files(
        SECTION,
        &cfg.emit(),
        &[("csv_schema", "run_record_v1".to_string())],
    )?;

    let setup = build_problem(&cfg)?;
    let refs: Vec<&dyn Environment> = setup.envs.iter().map(|e| e.as_ref()).collect();
    let stepper = cfg.build_stepper()?;
    let rng = RunRng::new(cfg.seed);

    let mut state = match &cfg.resume {
        None => OptState::new(setup.theta0.clone()),
        Some(path) => restore_state(&read_snapshot(path)?, &setup.theta0)?,
    };
    let first_step = state.step;
    if first_step as usize >= cfg.steps {
        return Err(CliError::config(format!(
            "resume checkpoint is already at step {first_step}, nothing to do"
        )));
    }

    let mut header: Vec<String> = vec!["step".to_string()];
    header.extend(refs.iter().map(|e| format!("loss_{}", e.id())));
    header.extend(
        ["aggregate_loss", "agreement", "beta", "eps_norm"]
            .iter()
            .map(|s| s.to_string()),
    );
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut record = CsvFile::create(&ctx.path("run_record.csv"), &header_refs)?;
    let mut timings = CsvFile::create(&ctx.path("timings.csv"), &["step", "wall_time_s"])?;

    for _ in first_step as usize..cfg.steps {
        let step_index = state.step;
        let wall = Instant::now();
        let report = stepper.step(&mut state, &refs, &rng, 0)?;
        let elapsed = wall.elapsed().as_secs_f64();

        let mut row: Vec<String> = vec![step_index.to_string()];
        row.extend(report.per_env_losses.iter().map(|l| l.to_string()));
        row.push(report.aggregate_loss.to_string());
        row.push(report.agreement.map_or(String::new(), |v| v.to_string()));
        row.push(report.noise_scale.map_or(String::new(), |v| v.to_string()));
        row.push(report.eps_norm.map_or(String::new(), |v| v.to_string()));
        record.write_row(&row)?;
        timings.write_row(&[step_index.to_string(), elapsed.to_string()])?;

        if cfg.checkpoint_every > 0
            && (state.step as usize).is_multiple_of(cfg.checkpoint_every)
            && (state.step as usize) < cfg.steps
        {
            write_snapshot(
                &ctx.path(&format!("checkpoint_{}.sageps", state.step)),
                &checkpoint_params(&state),
            )?;
        }
    }
    record.finish()?;
    timings.finish()?;

    write_snapshot(&ctx.path("final_params.sageps"), &state.theta)?;
    write_snapshot(
        &ctx.path("final_checkpoint.sageps"),
        &checkpoint_params(&state),
    )?;

    let final_flat = state.theta.flatten();
    println!(
        "trained {} on {} for {} steps; |theta| = {:.6}",
        cfg.stepper,
        cfg.problem,
        cfg.steps,
        final_flat.iter().map(|v| v * v).sum::<f64>().sqrt()
    );
    Ok(Outcome::Pass)
}
