//! `motivating`: recompute every number of the two-domain example and lay it
//! next to its externally known reference value.

use sage_core::theorylab::motivating_example_report;

use crate::commands::{default_out, Overrides};
use crate::config::SectionEmitter;
use crate::csvio::CsvFile;
use crate::{load_raw_config, CliError, Outcome, RunContext};

const SECTION: &str = "motivating";

#[derive(Clone, Debug)]
pub struct Config {
    pub seed: u64,
    pub out: std::path::PathBuf,
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
        };
        reader.finish()?;
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        let mut e = SectionEmitter::new(SECTION);
        e.kv("seed", self.seed).kv("out", self.out.display());
        e.into_string()
    }
}

pub fn run(overrides: &Overrides) -> Result<Outcome, CliError> {
    let cfg = Config::resolve(overrides)?;
    let ctx = RunContext::prepare(cfg.out.clone(), cfg.seed)?;
    ctx.write_run_files(
        SECTION,
        &cfg.emit(),
        &[("csv_schema", "motivating_v1".to_string())],
    )?;

    let r = motivating_example_report()?;
    // (quantity, computed, reference, absolute tolerance)
    let rows: Vec<(&str, f64, f64, f64)> = vec![
        ("h_bar[0][0]", r.h_bar[(0, 0)], 10.0, 1e-12),
        ("h_bar[0][1]", r.h_bar[(0, 1)], 0.0, 1e-12),
        ("h_bar[1][1]", r.h_bar[(1, 1)], 4.01, 1e-12),
        ("theta_star[0]", r.theta_star[0], 0.1, 1e-10),
        ("theta_star[1]", r.theta_star[1], 0.0, 1e-10),
        ("grad1_at_origin[0]", r.grads_at_origin[0][0], -1.0, 1e-12),
        ("grad1_at_origin[1]", r.grads_at_origin[0][1], -2.0, 1e-12),
        ("grad2_at_origin[0]", r.grads_at_origin[1][0], -1.0, 1e-12),
        ("grad2_at_origin[1]", r.grads_at_origin[1][1], 2.0, 1e-12),
        ("sigma_g[0][0]", r.sigma_g_at_star[(0, 0)], 0.0, 1e-10),
        ("sigma_g[1][1]", r.sigma_g_at_star[(1, 1)], 3.24, 1e-10),
        ("tr_hinv_sigma", r.tr_hinv_sigma, 0.80798, 1e-5),
        ("domain1_opt[0]", r.per_domain_optima[0][0], 0.0003, 5e-4),
        ("domain1_opt[1]", r.per_domain_optima[0][1], 0.499, 5e-4),
        ("domain2_opt[0]", r.per_domain_optima[1][0], 0.0003, 5e-4),
        ("domain2_opt[1]", r.per_domain_optima[1][1], -0.499, 5e-4),
        ("loss_increase_at_0.1", r.loss_increase, 0.05, 1e-10),
    ];

    let mut csv = CsvFile::create(
        &ctx.path("motivating.csv"),
        &[
            "quantity",
            "computed",
            "paper",
            "abs_diff",
            "tolerance",
            "pass",
        ],
    )?;
    let mut all_pass = true;
    for (name, computed, reference, tol) in rows {
        let diff = (computed - reference).abs();
        let pass = diff <= tol;
        all_pass &= pass;
        println!(
            "{name}: computed {computed:.8} vs {reference} (|diff| {diff:.2e}, tol {tol:.0e}) [{}]",
            if pass { "pass" } else { "FAIL" }
        );
        csv.write_row(&[
            name.to_string(),
            computed.to_string(),
            reference.to_string(),
            diff.to_string(),
            tol.to_string(),
            pass.to_string(),
        ])?;
    }
    csv.finish()?;
    Ok(if all_pass {
        Outcome::Pass
    } else {
        Outcome::GateFailed
    })
}
