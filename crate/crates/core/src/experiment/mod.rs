//! Config-driven experiment runs.
//!
//! An experiment is a TOML document (see [`parse_config`]) naming a scheme,
//! model overrides and a list of analyses. [`run_experiment`] executes them
//! into a [`ResultBundle`] and [`serialize_results`] writes one JSON summary
//! plus one CSV per table. Outputs depend only on the config and seed.

mod config;
mod output;
mod run;

use std::str::FromStr;

use crate::error::Error;

pub use config::{
    load_config, parse_config, ExperimentConfig, FitKind, FitSource, MidcircuitSettings,
    RepumpConfig, SweepConfig, DEFAULT_P_OFF, DEFAULT_SEED, DEFAULT_SHOTS, REPUMP_CALIBRATION_US,
};
pub use output::{
    parse_summary, round_sig, serialize_results, Cell, ResultBundle, ResultTable, Scalar, Summary,
};
pub use run::{read_fit_data, run_experiment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Analysis {
    /// Monte Carlo histograms and empirical discriminator errors.
    Simulate,
    /// Analytic count distributions and threshold errors.
    Analyze,
    /// Error versus duration and efficiency; leak rate versus repump power.
    Sweep,
    /// Flip-curve or fringe fits.
    Fit,
    /// Ramsey contrast through the shelving sequences.
    Midcircuit,
    /// Collection-efficiency budget and branching constants.
    Budget,
}

impl Analysis {
    pub const ALL: [Analysis; 6] = [
        Analysis::Simulate,
        Analysis::Analyze,
        Analysis::Sweep,
        Analysis::Fit,
        Analysis::Midcircuit,
        Analysis::Budget,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Simulate => "simulate",
            Analysis::Analyze => "analyze",
            Analysis::Sweep => "sweep",
            Analysis::Fit => "fit",
            Analysis::Midcircuit => "midcircuit",
            Analysis::Budget => "budget",
        }
    }
}

impl FromStr for Analysis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        Analysis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid("analysis", format!("unknown analysis {s:?}")))
    }
}

/// Every output the runner can produce, with its file extension.
pub const OUTPUT_KEYS: &[(&str, &str)] = &[
    ("summary", "json"),
    ("histogram_dark", "csv"),
    ("histogram_bright", "csv"),
    ("pmf", "csv"),
    ("thresholds", "csv"),
    ("duration_sweep", "csv"),
    ("efficiency_sweep", "csv"),
    ("repump", "csv"),
    ("fit_data", "csv"),
    ("fit_params", "csv"),
    ("midcircuit", "csv"),
    ("ramsey", "csv"),
    ("budget", "csv"),
];
