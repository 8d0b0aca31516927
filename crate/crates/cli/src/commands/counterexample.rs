//! `counterexample`: reproduce both decoupling constructions over an M grid,
//! recomputing the target traces through the statistics pipeline.

use sage_core::theorylab::{build_counterexample, CounterexampleVariant};

use crate::commands::{default_out, Overrides};
use crate::config::SectionEmitter;
use crate::csvio::CsvFile;
use crate::{load_raw_config, CliError, Outcome, RunContext};

const SECTION: &str = "counterexample";

#[derive(Clone, Debug)]
pub struct Config {
    pub seed: u64,
    pub out: std::path::PathBuf,
    pub m_grid: Vec<f64>,
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
            m_grid: reader.take_list("m_grid", &[2.0, 10.0, 100.0])?,
        };
        reader.finish()?;
        if cfg.m_grid.iter().any(|m| *m <= 1.0 || !m.is_finite()) {
            return Err(CliError::config(format!(
                "[{SECTION}] every M must exceed 1"
            )));
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        let mut e = SectionEmitter::new(SECTION);
        e.kv("seed", self.seed)
            .kv("out", self.out.display())
            .kv_list("m_grid", &self.m_grid);
        e.into_string()
    }
}

pub fn run(overrides: &Overrides) -> Result<Outcome, CliError> {
    let cfg = Config::resolve(overrides)?;
    let ctx = RunContext::prepare(cfg.out.clone(), cfg.seed)?;
    ctx.write_run_files(
        SECTION,
        &cfg.emit(),
        &[("csv_schema", "counterexample_v1".to_string())],
    )?;

    let mut csv = CsvFile::create(
        &ctx.path("counterexample.csv"),
        &["M", "variant", "tr_H", "tr_HinvSigma", "bound_check"],
    )?;
    let mut all_pass = true;
    for &m in &cfg.m_grid {
        for variant in [
            CounterexampleVariant::FlatMisaligned,
            CounterexampleVariant::AlignedSharp,
        ] {
            let inst = build_counterexample(m, variant)?;
            let ok = inst.satisfies_bounds();
            all_pass &= ok;
            println!(
                "M={m} {}: tr_H={:.6e} tr_HinvSigma={:.6e} [{}]",
                variant.label(),
                inst.tr_h,
                inst.tr_hinv_sigma,
                if ok { "pass" } else { "FAIL" }
            );
            csv.write_row(&[
                m.to_string(),
                variant.label().to_string(),
                inst.tr_h.to_string(),
                inst.tr_hinv_sigma.to_string(),
                ok.to_string(),
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
