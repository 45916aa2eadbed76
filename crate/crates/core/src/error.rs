use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("geometric series diverges: P->S branching probability {0} must be below 1")]
    Divergent(f64),

    #[error("no D-decay channel: P->D branching probability is zero")]
    NoDecayChannel,

    #[error("shot count must be at least 1")]
    NoShots,

    #[error("count distribution does not normalize: |sum - 1| = {deviation:e} at n_max = {n_max}")]
    Normalization { deviation: f64, n_max: usize },

    #[error("photon timestamps invalid: {0}")]
    Timestamps(String),

    #[error("dataset contains only {present:?} shots; both prepared states are required")]
    SingleClass { present: crate::QubitState },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("fit input rejected: {0}")]
    FitInput(String),

    #[error("config `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot write `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("{value} is not in [0, 1]")))
    }
}

pub(crate) fn check_non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("{value} must be finite and >= 0"),
        ))
    }
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            name,
            format!("{value} must be finite and > 0"),
        ))
    }
}
