//! `verify-decomposition`: Monte Carlo check of the two-term excess-risk
//! decomposition over a (K, sigma) grid on the flat quadratic family.

use sage_core::rng::RunRng;
use sage_core::theorylab::{
    build_counterexample, mc_excess_risk, CounterexampleVariant, McConfig, MetaDistribution,
    ThetaHatMode,
};

use crate::commands::{default_out, Overrides};
use crate::config::SectionEmitter;
use crate::csvio::CsvFile;
use crate::{load_raw_config, mc_threads, CliError, Outcome, RunContext};

const SECTION: &str = "verify-decomposition";

#[derive(Clone, Debug)]
pub struct Config {
    pub seed: u64,
    pub out: std::path::PathBuf,
    pub trials: usize,
    pub k_grid: Vec<usize>,
    pub sigma_grid: Vec<f64>,
    pub m: f64,
    pub meta: String,
    pub theta_hat: String,
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
            trials: reader.take("trials", 100_000usize)?,
            k_grid: reader.take_list("k_grid", &[1usize, 2, 5, 10])?,
            sigma_grid: reader.take_list("sigma_grid", &[0.0, 0.1, 0.3])?,
            m: reader.take("m", 10.0f64)?,
            meta: reader.take_choice("meta", &["uniform", "gaussian"], "uniform")?,
            theta_hat: reader.take_choice("theta_hat", &["closed-form", "sgd"], "closed-form")?,
        };
        reader.finish()?;
        if cfg.trials < 100 {
            return Err(CliError::config(format!(
                "[{SECTION}] trials must be >= 100, got {}",
                cfg.trials
            )));
        }
        if cfg.m <= 1.0 || !cfg.m.is_finite() {
            return Err(CliError::config(format!(
                "[{SECTION}] m must exceed 1, got {}",
                cfg.m
            )));
        }
        if cfg.k_grid.is_empty() || cfg.sigma_grid.is_empty() {
            return Err(CliError::config(format!("[{SECTION}] empty grid")));
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        let mut e = SectionEmitter::new(SECTION);
        e.kv("seed", self.seed)
            .kv("out", self.out.display())
            .kv("trials", self.trials)
            .kv_list("k_grid", &self.k_grid)
            .kv_list("sigma_grid", &self.sigma_grid)
            .kv("m", self.m)
            .kv("meta", &self.meta)
            .kv("theta_hat", &self.theta_hat);
        e.into_string()
    }
}

pub fn run(overrides: &Overrides) -> Result<Outcome, CliError> {
    let cfg = Config::resolve(overrides)?;
    let ctx = RunContext::prepare(cfg.out.clone(), cfg.seed)?;
    ctx.write_run_files(
        SECTION,
        &cfg.emit(),
        &[("csv_schema", "decomposition_v1".to_string())],
    )?;

    let fam = build_counterexample(cfg.m, CounterexampleVariant::FlatMisaligned)?.family;
    let threads = mc_threads()?;
    let rng = RunRng::new(cfg.seed);

    let mut csv = CsvFile::create(
        &ctx.path("decomposition.csv"),
        &[
            "K",
            "sigma",
            "alignment_term",
            "curvature_term",
            "mc_mean",
            "mc_se",
            "trials",
            "pass",
        ],
    )?;
    let mut all_pass = true;
    for &k in &cfg.k_grid {
        for &sigma in &cfg.sigma_grid {
            let mut mc = McConfig::new(k, sigma, cfg.trials).with_threads(threads);
            if cfg.meta == "gaussian" {
                mc.meta = MetaDistribution::GaussianMatched;
            }
            if cfg.theta_hat == "sgd" {
                mc.theta_hat = ThetaHatMode::SgdToConvergence {
                    lr: 1.0 / cfg.m,
                    max_steps: 10_000,
                    tol: 1e-13,
                };
            }
            let report = mc_excess_risk(&fam, &mc, &rng)?;
            let pass = report.within_three_se();
            all_pass &= pass;
            println!(
                "K={k} sigma={sigma}: closed {:.6e} mc {:.6e} +- {:.3e} [{}]",
                report.closed_form(),
                report.mc_excess_mean,
                report.mc_excess_se,
                if pass { "pass" } else { "FAIL" }
            );
            csv.write_row(&[
                k.to_string(),
                sigma.to_string(),
                report.alignment_term.to_string(),
                report.curvature_term.to_string(),
                report.mc_excess_mean.to_string(),
                report.mc_excess_se.to_string(),
                report.trials.to_string(),
                pass.to_string(),
            ])?;
        }
    }
    csv.finish()?;
    Ok(if all_pass {
        Outcome::Pass
    } else {
        Outcome::GateFailed
    })
}
