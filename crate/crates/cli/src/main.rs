use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use readout_core::experiment::{
    load_config, parse_config, run_experiment, serialize_results, Analysis,
};

/// Trapped-ion fluorescence readout simulator.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo count histograms and empirical discriminator errors
    Simulate(Common),
    /// Analytic count distributions and threshold errors
    Analyze(Common),
    /// Error versus detection duration and collection efficiency, leak versus repump power
    Sweep(Common),
    /// Flip-curve fits to synthetic or measured data
    Fit(Common),
    /// Ramsey contrast through the mid-circuit shelving sequences
    Midcircuit(Common),
    /// Collection-efficiency budget and branching constants
    Budget(Common),
    /// Every analysis listed in the config (all of them by default)
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML); defaults to the reference shelving setup
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = "results")]
    out: PathBuf,
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let (analysis, args) = match cli.command {
        Command::Simulate(a) => (Some(Analysis::Simulate), a),
        Command::Analyze(a) => (Some(Analysis::Analyze), a),
        Command::Sweep(a) => (Some(Analysis::Sweep), a),
        Command::Fit(a) => (Some(Analysis::Fit), a),
        Command::Midcircuit(a) => (Some(Analysis::Midcircuit), a),
        Command::Budget(a) => (Some(Analysis::Budget), a),
        Command::Run(a) => (None, a),
    };
    let mut cfg = match &args.config {
        Some(path) => load_config(path).with_context(|| format!("loading {}", path.display()))?,
        None => parse_config("")?,
    };
    if let Some(a) = analysis {
        cfg.analyses = vec![a];
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let bundle = run_experiment(&cfg)?;
    for path in serialize_results(&bundle, &args.out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
