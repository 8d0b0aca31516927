//! `scale-invariance`: train the circles MLP (both bias variants), then
//! measure every rule's sharpness across the weight-rescaling grid.

use sage_core::experiments::{scale_invariance_sweep, ScaleInvarianceConfig};

use crate::commands::{default_out, Overrides};
use crate::config::SectionEmitter;
use crate::csvio::CsvFile;
use crate::svg::SvgPlot;
use crate::{load_raw_config, CliError, Outcome, RunContext};

const SECTION: &str = "scale-invariance";

/// Gates shared with the acceptance suite.
const NO_BIAS_REL_TOL: f64 = 1e-6;
const SPECTRAL_RATIO_GATE: f64 = 1.5;
const SAM_RATIO_GATE: f64 = 5.0;

#[derive(Clone, Debug)]
pub struct Config {
    pub seed: u64,
    pub out: std::path::PathBuf,
    pub mlp_seed: u64,
    pub train_steps: usize,
    pub train_lr: f64,
    pub rho: f64,
    pub alpha_grid: Vec<f64>,
}

impl Config {
    pub fn resolve(overrides: &Overrides) -> Result<Self, CliError> {
        let defaults = ScaleInvarianceConfig::default();
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
            mlp_seed: reader.take("mlp_seed", defaults.mlp_seed)?,
            train_steps: reader.take("train_steps", defaults.train_steps)?,
            train_lr: reader.take("train_lr", defaults.train_lr)?,
            rho: reader.take("rho", defaults.rho)?,
            alpha_grid: reader.take_list("alpha_grid", &defaults.alpha_grid)?,
        };
        reader.finish()?;
        if cfg.rho <= 0.0 || cfg.train_lr <= 0.0 || cfg.alpha_grid.is_empty() {
            return Err(CliError::config(format!(
                "[{SECTION}] rho and train_lr must be positive and alpha_grid non-empty"
            )));
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        let mut e = SectionEmitter::new(SECTION);
        e.kv("seed", self.seed)
            .kv("out", self.out.display())
            .kv("mlp_seed", self.mlp_seed)
            .kv("train_steps", self.train_steps)
            .kv("train_lr", self.train_lr)
            .kv("rho", self.rho)
            .kv_list("alpha_grid", &self.alpha_grid);
        e.into_string()
    }

    fn sweep_config(&self, with_bias: bool) -> ScaleInvarianceConfig {
        ScaleInvarianceConfig {
            mlp_seed: self.mlp_seed,
            with_bias,
            train_steps: self.train_steps,
            train_lr: self.train_lr,
            rho: self.rho,
            alpha_grid: self.alpha_grid.clone(),
        }
    }
}

pub fn run(overrides: &Overrides) -> Result<Outcome, CliError> {
    let cfg = Config::resolve(overrides)?;
    let ctx = RunContext::prepare(cfg.out.clone(), cfg.seed)?;
    ctx.write_run_files(
        SECTION,
        &cfg.emit(),
        &[("csv_schema", "scale_invariance_v1".to_string())],
    )?;

    let mut all_pass = true;
    let mut plot = SvgPlot::new(640.0, 420.0, (-1.1, 1.1), (-9.0, 0.5));
    let colors = ["#d62728", "#ff9f40", "#1f77b4"];
    let names = ["sam_l2", "adaptive_l2", "spectral"];

    for with_bias in [false, true] {
        let result = scale_invariance_sweep(&cfg.sweep_config(with_bias))?;
        let label = if with_bias { "with_bias" } else { "no_bias" };
        let mut csv = CsvFile::create(
            &ctx.path(&format!("scale_invariance_{label}.csv")),
            &[
                "alpha",
                "sharpness_sam",
                "sharpness_adaptive",
                "sharpness_spectral",
                "true_flag",
            ],
        )?;
        for row in &result.rows {
            csv.write_row(&[
                row.alpha.to_string(),
                row.sharpness_sam.to_string(),
                row.sharpness_adaptive.to_string(),
                row.sharpness_spectral.to_string(),
                (row.used_true_gradient as u8).to_string(),
            ])?;
        }
        csv.finish()?;

        if with_bias {
            let spec_ratio = result.max_min_ratio(|r| r.sharpness_spectral);
            let sam_ratio = result.max_min_ratio(|r| r.sharpness_sam);
            let pass = spec_ratio <= SPECTRAL_RATIO_GATE && sam_ratio >= SAM_RATIO_GATE;
            all_pass &= pass;
            println!(
                "with-bias: spectral max/min {spec_ratio:.4} (gate <= {SPECTRAL_RATIO_GATE}), \
                 sam max/min {sam_ratio:.2} (gate >= {SAM_RATIO_GATE}) [{}]",
                if pass { "pass" } else { "FAIL" }
            );
            // Sharpness-vs-alpha curves on log-log axes.
            for (idx, pick) in [
                |r: &sage_core::experiments::SharpnessRow| r.sharpness_sam,
                |r: &sage_core::experiments::SharpnessRow| r.sharpness_adaptive,
                |r: &sage_core::experiments::SharpnessRow| r.sharpness_spectral,
            ]
            .iter()
            .enumerate()
            {
                let pts: Vec<[f64; 2]> = result
                    .rows
                    .iter()
                    .map(|r| [r.alpha.log10(), pick(r).abs().max(1e-12).log10()])
                    .collect();
                plot.polyline(&pts, colors[idx], 2.0);
                plot.label([0.55, -1.0 - idx as f64 * 0.5], names[idx], colors[idx]);
            }
        } else {
            let base = result
                .rows
                .iter()
                .find(|r| r.alpha == 1.0)
                .map(|r| r.sharpness_spectral)
                .unwrap_or(result.rows[0].sharpness_spectral);
            let max_rel = result
                .rows
                .iter()
                .map(|r| (r.sharpness_spectral - base).abs() / base.abs())
                .fold(0.0f64, f64::max);
            let pass = max_rel <= NO_BIAS_REL_TOL;
            all_pass &= pass;
            println!(
                "no-bias: spectral relative deviation {max_rel:.3e} (gate <= {NO_BIAS_REL_TOL:.0e}) [{}]",
                if pass { "pass" } else { "FAIL" }
            );
        }
    }
    plot.save(&ctx.path("scale_invariance.svg"))?;

    Ok(if all_pass {
        Outcome::Pass
    } else {
        Outcome::GateFailed
    })
}
