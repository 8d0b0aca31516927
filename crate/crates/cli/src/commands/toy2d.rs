//! `toy2d`: the two-minima trajectory ensemble with per-seed basin
//! classification and trajectory polylines for plotting.

use sage_core::experiments::{toy2d_ensemble, Toy2dEnsembleConfig};
use sage_core::problems::toy2d_landscape;
use sage_core::rng::RunRng;

use crate::commands::{default_out, Overrides};
use crate::config::SectionEmitter;
use crate::csvio::CsvFile;
use crate::svg::SvgPlot;
use crate::{load_raw_config, CliError, Outcome, RunContext};

const SECTION: &str = "toy2d";

/// Required lead of the agreement-noise stepper over each baseline.
const FRACTION_MARGIN: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct Config {
    pub seed: u64,
    pub out: std::path::PathBuf,
    pub seeds: usize,
    pub steps: usize,
    pub lr: f64,
    pub gamma: f64,
    pub rho_sam: f64,
    pub sigma_sgld: f64,
    pub record_trajectories: usize,
}

impl Config {
    pub fn resolve(overrides: &Overrides) -> Result<Self, CliError> {
        let defaults = Toy2dEnsembleConfig::default();
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
            seeds: reader.take("seeds", defaults.seeds)?,
            steps: reader.take("steps", defaults.steps)?,
            lr: reader.take("lr", defaults.lr)?,
            gamma: reader.take("gamma", defaults.gamma)?,
            rho_sam: reader.take("rho_sam", defaults.rho_sam)?,
            sigma_sgld: reader.take("sigma_sgld", defaults.sigma_sgld)?,
            record_trajectories: reader.take("record_trajectories", 5usize)?,
        };
        reader.finish()?;
        if cfg.seeds == 0 || cfg.steps == 0 || cfg.lr <= 0.0 {
            return Err(CliError::config(format!(
                "[{SECTION}] seeds, steps, and lr must be positive"
            )));
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        let mut e = SectionEmitter::new(SECTION);
        e.kv("seed", self.seed)
            .kv("out", self.out.display())
            .kv("seeds", self.seeds)
            .kv("steps", self.steps)
            .kv("lr", self.lr)
            .kv("gamma", self.gamma)
            .kv("rho_sam", self.rho_sam)
            .kv("sigma_sgld", self.sigma_sgld)
            .kv("record_trajectories", self.record_trajectories);
        e.into_string()
    }
}

pub fn run(overrides: &Overrides) -> Result<Outcome, CliError> {
    let cfg = Config::resolve(overrides)?;
    let ctx = RunContext::prepare(cfg.out.clone(), cfg.seed)?;
    ctx.write_run_files(
        SECTION,
        &cfg.emit(),
        &[("csv_schema", "toy2d_v1".to_string())],
    )?;

    let ensemble_cfg = Toy2dEnsembleConfig {
        seeds: cfg.seeds,
        steps: cfg.steps,
        lr: cfg.lr,
        gamma: cfg.gamma,
        rho_sam: cfg.rho_sam,
        sigma_sgld: cfg.sigma_sgld,
        record_trajectories: cfg.record_trajectories,
    };
    let result = toy2d_ensemble(&ensemble_cfg, &RunRng::new(cfg.seed))?;

    let mut basins = CsvFile::create(
        &ctx.path("toy2d_basins.csv"),
        &["seed", "stepper", "final_x", "final_y", "basin"],
    )?;
    for outcome in &result.outcomes {
        for (seed, (point, basin)) in outcome.final_points.iter().zip(&outcome.basins).enumerate() {
            basins.write_row(&[
                seed.to_string(),
                outcome.stepper.to_string(),
                point[0].to_string(),
                point[1].to_string(),
                basin.to_string(),
            ])?;
        }
    }
    basins.finish()?;

    let mut summary = CsvFile::create(
        &ctx.path("toy2d_summary.csv"),
        &["stepper", "runs", "fraction_b"],
    )?;
    for outcome in &result.outcomes {
        summary.write_row(&[
            outcome.stepper.to_string(),
            cfg.seeds.to_string(),
            outcome.fraction_b.to_string(),
        ])?;
    }
    summary.finish()?;

    // Trajectory polylines, one file per (stepper, recorded seed).
    for outcome in &result.outcomes {
        for (seed, polyline) in &outcome.trajectories {
            let mut traj = CsvFile::create(
                &ctx.path(&format!("toy2d_traj_{}_{seed}.csv", outcome.stepper)),
                &["step", "x", "y"],
            )?;
            for (step, p) in polyline.iter().enumerate() {
                traj.write_row(&[step.to_string(), p[0].to_string(), p[1].to_string()])?;
            }
            traj.finish()?;
        }
    }

    // Overview plot: recorded trajectories over the two minima.
    let land = toy2d_landscape();
    let mut plot = SvgPlot::new(640.0, 480.0, (-2.2, 2.2), (-1.65, 1.65));
    let colors = [
        ("erm", "#7f7f7f"),
        ("sam", "#d62728"),
        ("sgld", "#ff9f40"),
        ("sage_noise", "#1f77b4"),
    ];
    for outcome in &result.outcomes {
        let color = colors
            .iter()
            .find(|(n, _)| *n == outcome.stepper)
            .map(|(_, c)| *c)
            .unwrap_or("#000000");
        for (_, polyline) in &outcome.trajectories {
            plot.polyline(polyline, color, 1.0);
        }
    }
    plot.marker(land.minimum_a(), 5.0, "#000000");
    plot.label(
        [land.minimum_a()[0] - 0.1, land.minimum_a()[1] + 0.15],
        "A",
        "#000000",
    );
    plot.marker(land.minimum_b(), 5.0, "#000000");
    plot.label(
        [land.minimum_b()[0] - 0.1, land.minimum_b()[1] + 0.15],
        "B",
        "#000000",
    );
    for (i, (name, color)) in colors.iter().enumerate() {
        plot.label([1.4, 1.5 - 0.18 * i as f64], name, color);
    }
    plot.save(&ctx.path("toy2d.svg"))?;

    let sage = result.fraction_b("sage_noise").unwrap_or(0.0);
    let mut all_pass = true;
    for baseline in ["erm", "sam", "sgld"] {
        let frac = result.fraction_b(baseline).unwrap_or(1.0);
        let pass = sage >= frac + FRACTION_MARGIN;
        all_pass &= pass;
        println!(
            "fraction_B: sage_noise {sage:.2} vs {baseline} {frac:.2} (margin {FRACTION_MARGIN}) [{}]",
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if all_pass {
        Outcome::Pass
    } else {
        Outcome::GateFailed
    })
}
