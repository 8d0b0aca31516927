//! Implementation of the `sage-opt` experiment runner. The binary in
//! `main.rs` is a thin argument-parsing shell over [`commands`].

pub mod commands;
pub mod config;
pub mod csvio;
pub mod snapshot;
pub mod svg;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use sage_core::CoreError;

/// Exit-code protocol: 0 all gates passed, 1 a gate failed, 2 usage or
/// configuration error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    GateFailed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Pass => 0,
            Outcome::GateFailed => 1,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(std::io::Error),
    Core(CoreError),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

/// Where a run writes its artifacts, plus the run seed.
#[derive(Clone, Debug)]
pub struct RunContext {
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl RunContext {
    pub fn prepare(out_dir: PathBuf, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(&out_dir)?;
        Ok(Self { out_dir, seed })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Write the resolved configuration and the run manifest. The manifest
    /// carries the config hash and library version; both files are
    /// deterministic for a given (config, seed).
    pub fn write_run_files(
        &self,
        subcommand: &str,
        resolved_config: &str,
        extra_manifest: &[(&str, String)],
    ) -> Result<(), CliError> {
        fs::write(self.path("resolved_config.txt"), resolved_config)?;
        let mut manifest = String::new();
        manifest.push_str(&format!("subcommand = {subcommand}\n"));
        manifest.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        manifest.push_str(&format!("seed = {}\n", self.seed));
        manifest.push_str(&format!(
            "config_hash = {:016x}\n",
            fnv1a64(resolved_config.as_bytes())
        ));
        for (key, value) in extra_manifest {
            manifest.push_str(&format!("{key} = {value}\n"));
        }
        fs::write(self.path("run_manifest.txt"), manifest)?;
        Ok(())
    }
}

/// FNV-1a, used only to fingerprint resolved configs in manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Worker-thread count for Monte Carlo trials, from `SAGE_OPT_THREADS`
/// (default 1). Results are bit-identical for any value.
pub fn mc_threads() -> Result<usize, CliError> {
    match std::env::var("SAGE_OPT_THREADS") {
        Err(_) => Ok(1),
        Ok(text) => text
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| CliError::config(format!("SAGE_OPT_THREADS: cannot parse {text:?}"))),
    }
}

/// Read a config file when given; an absent file means all defaults.
pub fn load_raw_config(path: Option<&Path>) -> Result<config::RawConfig, CliError> {
    match path {
        None => Ok(config::RawConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            config::RawConfig::parse(&text)
        }
    }
}
