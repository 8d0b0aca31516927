use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sage_opt::commands::{
    counterexample, motivating, scale_invariance, toy2d, train, verify_decomposition, Overrides,
};
use sage_opt::Outcome;

/// Experiment runner for the SAGE optimizer library.
#[derive(Parser)]
#[command(name = "sage-opt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (`[subcommand]` sections of `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: out/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo check of the excess-risk decomposition over a (K, sigma) grid.
    VerifyDecomposition(CommonArgs),
    /// Reproduce the flat-misaligned / aligned-sharp constructions over an M grid.
    Counterexample(CommonArgs),
    /// Recompute the two-domain example ledger next to its reference values.
    Motivating(CommonArgs),
    /// Train the circles MLP and sweep sharpness across weight rescalings.
    ScaleInvariance(CommonArgs),
    /// Trajectory ensemble on the two-minima landscape.
    Toy2d(CommonArgs),
    /// Train any stepper on any library problem, logging per-step records.
    Train(CommonArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, args): (fn(&Overrides) -> _, &CommonArgs) = match &cli.command {
        Command::VerifyDecomposition(a) => (verify_decomposition::run, a),
        Command::Counterexample(a) => (counterexample::run, a),
        Command::Motivating(a) => (motivating::run, a),
        Command::ScaleInvariance(a) => (scale_invariance::run, a),
        Command::Toy2d(a) => (toy2d::run, a),
        Command::Train(a) => (train::run, a),
    };
    let overrides = Overrides {
        config: args.config.clone(),
        out: args.out.clone(),
        seed: args.seed,
    };
    match run(&overrides) {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::GateFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("sage-opt: {e}");
            ExitCode::from(2)
        }
    }
}
