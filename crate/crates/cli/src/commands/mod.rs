//! One module per subcommand. Each builds its resolved configuration from
//! the raw file plus command-line overrides, writes the resolved config and
//! manifest next to its outputs, and returns whether every gate passed.

pub mod counterexample;
pub mod motivating;
pub mod scale_invariance;
pub mod toy2d;
pub mod train;
pub mod verify_decomposition;

use std::path::PathBuf;

/// Command-line overrides shared by all subcommands.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub(crate) fn default_out(subcommand: &str) -> PathBuf {
    PathBuf::from("out").join(subcommand)
}
