//! TOML experiment description with defaults at the reference operating point.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::midcircuit::{
    calibrate_lightshift, Envelope, MidcircuitConfig, Sequence, SHELVE_DETECT_CONTRAST,
};
use crate::physics::{
    calibrate_repump_slope, flip_probability, lifetime_floor, two_step_transfer_error,
    BranchingParams, EfficiencyBudget, RateConstants, Scheme, BACKGROUND_RATE, COLLECTED_RATE,
    DETECTION_DURATION_US, D_BRANCHING_RATIO, REPUMP_POWER_UW,
};
use crate::trajectory::DetectionModel;

use super::{Analysis, OUTPUT_KEYS};

pub const DEFAULT_SEED: u64 = 1729;
pub const DEFAULT_SHOTS: u64 = 50_000;
/// Off-resonant excitation probability per scattering event used for branching outputs.
pub const DEFAULT_P_OFF: f64 = 1e-4;
/// Window over which the measured dark-to-bright rate fixes the repump slope.
pub const REPUMP_CALIBRATION_US: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub durations: Vec<f64>,
    pub efficiencies: Vec<f64>,
    pub repump_powers: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            durations: (1..=150).map(|k| 2.0 * k as f64).collect(),
            efficiencies: vec![0.002, 0.00381, 0.00763, 0.0153, 0.0305, 0.0435, 0.087, 0.1],
            repump_powers: vec![0.0, 1.0, 2.0, 3.0, 4.7, 6.0, 8.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepumpConfig {
    pub floor: f64,
    /// Added dark-to-bright rate per µW of repump power.
    pub slope: f64,
    /// Window for the reported flip probability.
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitKind {
    Flip,
    Ramsey,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitSource {
    /// Binomial flip curves drawn at the configured leak rates.
    Synthetic {
        points: usize,
        trials: u64,
        plateau: f64,
    },
    /// CSV with columns `x,probability,trials`.
    Data { kind: FitKind, path: PathBuf },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MidcircuitSettings {
    /// Shared parameters; the sequence field is ignored.
    pub base: MidcircuitConfig,
    pub phases: usize,
    pub shots_per_phase: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub rates: RateConstants,
    pub model: DetectionModel,
    pub budget: EfficiencyBudget,
    pub branching: BranchingParams,
    pub sweep: SweepConfig,
    pub repump: RepumpConfig,
    pub fit: FitSource,
    pub midcircuit: MidcircuitSettings,
    /// Monte Carlo shots per prepared state.
    pub shots: u64,
    pub seed: u64,
    pub analyses: Vec<Analysis>,
    /// Output key to file name.
    pub outputs: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        parse_config("").expect("empty config is valid")
    }
}

#[derive(Clone, Copy)]
enum Check {
    NonNegative,
    Positive,
    Probability,
    /// (0, 1]
    Efficiency,
}

impl Check {
    fn test(self, v: f64) -> Option<&'static str> {
        let ok = v.is_finite()
            && match self {
                Check::NonNegative => v >= 0.0,
                Check::Positive => v > 0.0,
                Check::Probability => (0.0..=1.0).contains(&v),
                Check::Efficiency => v > 0.0 && v <= 1.0,
            };
        if ok {
            None
        } else {
            Some(match self {
                Check::NonNegative => "must be finite and >= 0",
                Check::Positive => "must be finite and > 0",
                Check::Probability => "must lie in [0, 1]",
                Check::Efficiency => "must lie in (0, 1]",
            })
        }
    }
}

/// A table whose keys are consumed as they are read; leftovers are unknown keys.
struct Section {
    path: String,
    table: Table,
}

impl Section {
    fn key_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::config(self.key_path(key), message)
    }

    fn section(&mut self, key: &str) -> Result<Section> {
        let path = self.key_path(key);
        match self.table.remove(key) {
            None => Ok(Section {
                path,
                table: Table::new(),
            }),
            Some(Value::Table(table)) => Ok(Section { path, table }),
            Some(other) => Err(Error::config(
                path,
                format!("expected a table, found {}", other.type_str()),
            )),
        }
    }

    fn opt_float(&mut self, key: &str, check: Check) -> Result<Option<f64>> {
        let v = match self.table.remove(key) {
            None => return Ok(None),
            Some(Value::Float(f)) => f,
            Some(Value::Integer(i)) => i as f64,
            Some(other) => {
                return Err(self.error(
                    key,
                    format!("expected a number, found {}", other.type_str()),
                ))
            }
        };
        match check.test(v) {
            None => Ok(Some(v)),
            Some(why) => Err(self.error(key, format!("{v} {why}"))),
        }
    }

    fn float(&mut self, key: &str, default: f64, check: Check) -> Result<f64> {
        Ok(self.opt_float(key, check)?.unwrap_or(default))
    }

    fn opt_uint(&mut self, key: &str) -> Result<Option<u64>> {
        match self.table.remove(key) {
            None => Ok(None),
            Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
            Some(Value::Integer(i)) => Err(self.error(key, format!("{i} must be >= 0"))),
            Some(other) => Err(self.error(
                key,
                format!("expected an integer, found {}", other.type_str()),
            )),
        }
    }

    fn uint(&mut self, key: &str, default: u64) -> Result<u64> {
        Ok(self.opt_uint(key)?.unwrap_or(default))
    }

    fn opt_string(&mut self, key: &str) -> Result<Option<String>> {
        match self.table.remove(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(self.error(
                key,
                format!("expected a string, found {}", other.type_str()),
            )),
        }
    }

    fn parsed<T>(&mut self, key: &str) -> Result<Option<T>>
    where
        T: std::str::FromStr,
        T::Err: std::fmt::Display,
    {
        match self.opt_string(key)? {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e: T::Err| self.error(key, e.to_string())),
        }
    }

    fn array(&mut self, key: &str) -> Result<Option<Vec<Value>>> {
        match self.table.remove(key) {
            None => Ok(None),
            Some(Value::Array(items)) if items.is_empty() => {
                Err(self.error(key, "list must not be empty"))
            }
            Some(Value::Array(items)) => Ok(Some(items)),
            Some(other) => {
                Err(self.error(key, format!("expected a list, found {}", other.type_str())))
            }
        }
    }

    /// Non-empty, strictly ascending list of numbers.
    fn grid(&mut self, key: &str, check: Check) -> Result<Option<Vec<f64>>> {
        let Some(items) = self.array(key)? else {
            return Ok(None);
        };
        let mut out = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let v = match item {
                Value::Float(f) => *f,
                Value::Integer(n) => *n as f64,
                other => {
                    return Err(self.error(
                        key,
                        format!("item {i}: expected a number, found {}", other.type_str()),
                    ))
                }
            };
            if let Some(why) = check.test(v) {
                return Err(self.error(key, format!("item {i}: {v} {why}")));
            }
            if out.last().is_some_and(|&prev| v <= prev) {
                return Err(self.error(key, format!("item {i}: values must be strictly ascending")));
            }
            out.push(v);
        }
        Ok(Some(out))
    }

    fn finish(self) -> Result<()> {
        match self.table.keys().next() {
            None => Ok(()),
            Some(key) => Err(self.error(key, "unknown key")),
        }
    }
}

/// Parse a config document; relative data paths resolve against the working directory.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_in(text, Path::new(""))
}

/// Parse a config file; relative data paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
    parse_config_in(&text, path.parent().unwrap_or(Path::new("")))
}

fn parse_config_in(text: &str, base_dir: &Path) -> Result<ExperimentConfig> {
    let table: Table = toml::from_str(text)
        .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
    let mut root = Section {
        path: String::new(),
        table,
    };

    let scheme = root.parsed::<Scheme>("scheme")?.unwrap_or(Scheme::Shelving);
    let shots = root.uint("shots", DEFAULT_SHOTS)?;
    let seed = root.uint("seed", DEFAULT_SEED)?;
    let analyses = match root.array("analyses")? {
        None => Analysis::ALL.to_vec(),
        Some(items) => {
            let mut out = Vec::new();
            for (i, item) in items.iter().enumerate() {
                let name = item.as_str().ok_or_else(|| {
                    root.error("analyses", format!("item {i}: expected a string"))
                })?;
                let a: Analysis = name
                    .parse()
                    .map_err(|e: Error| root.error("analyses", format!("item {i}: {e}")))?;
                if !out.contains(&a) {
                    out.push(a);
                }
            }
            out.sort();
            out
        }
    };
    if shots == 0 && analyses.contains(&Analysis::Simulate) {
        return Err(root.error("shots", "simulation requires at least 1 shot"));
    }

    let measured = RateConstants::measured(scheme);
    let mut s = root.section("rates")?;
    let rates = RateConstants {
        r_bright_to_dark: s.float(
            "r_bright_to_dark",
            measured.r_bright_to_dark,
            Check::NonNegative,
        )?,
        r_dark_to_bright: s.float(
            "r_dark_to_bright",
            measured.r_dark_to_bright,
            Check::NonNegative,
        )?,
        d32_lifetime: s.float("d32_lifetime", measured.d32_lifetime, Check::Positive)?,
        saturated_scatter_rate: s.float(
            "saturated_scatter_rate",
            measured.saturated_scatter_rate,
            Check::Positive,
        )?,
    };
    s.finish()?;

    let mut s = root.section("model")?;
    let lambda_background = s.float("lambda_background", BACKGROUND_RATE, Check::NonNegative)?;
    let lambda_bright = s.float("lambda_bright", COLLECTED_RATE, Check::Positive)?;
    let duration = s.float("duration", DETECTION_DURATION_US, Check::Positive)?;
    if lambda_bright <= lambda_background {
        return Err(s.error("lambda_bright", "must exceed lambda_background"));
    }
    s.finish()?;
    let model = DetectionModel {
        lambda_bright,
        lambda_background,
        r_b2d: rates.r_bright_to_dark,
        r_d2b: rates.r_dark_to_bright,
        duration,
    };

    let s = root.section("budget")?;
    let budget = if s.table.is_empty() {
        EfficiencyBudget::reference()
    } else {
        let mut factors = Vec::new();
        for (name, value) in &s.table {
            let v = match value {
                Value::Float(f) => *f,
                Value::Integer(i) => *i as f64,
                other => {
                    return Err(s.error(
                        name,
                        format!("expected a number, found {}", other.type_str()),
                    ))
                }
            };
            if let Some(why) = Check::Probability.test(v) {
                return Err(s.error(name, format!("{v} {why}")));
            }
            factors.push((name.clone(), v));
        }
        EfficiencyBudget::new(factors).map_err(|e| Error::config(s.path.clone(), e.to_string()))?
    };

    let mut s = root.section("branching")?;
    let p_off = s.float("p_off", DEFAULT_P_OFF, Check::Probability)?;
    let branching = match (
        s.opt_float("p_ps", Check::Probability)?,
        s.opt_float("p_pd", Check::Probability)?,
    ) {
        (Some(p_ps), Some(p_pd)) => {
            if s.table.contains_key("d_branching") {
                return Err(s.error("d_branching", "give either d_branching or p_ps and p_pd"));
            }
            BranchingParams::new(p_off, p_ps, p_pd)
        }
        (None, None) => {
            let ratio = s.float("d_branching", D_BRANCHING_RATIO, Check::Probability)?;
            BranchingParams::from_d_branching(p_off, ratio)
        }
        (Some(_), None) => return Err(s.error("p_pd", "required when p_ps is given")),
        (None, Some(_)) => return Err(s.error("p_ps", "required when p_pd is given")),
    }
    .map_err(|e| Error::config(s.path.clone(), e.to_string()))?;
    s.finish()?;

    let mut s = root.section("sweep")?;
    let defaults = SweepConfig::default();
    let sweep = SweepConfig {
        durations: s
            .grid("durations", Check::Positive)?
            .unwrap_or(defaults.durations),
        efficiencies: s
            .grid("efficiencies", Check::Efficiency)?
            .unwrap_or(defaults.efficiencies),
        repump_powers: s
            .grid("repump_powers", Check::NonNegative)?
            .unwrap_or(defaults.repump_powers),
    };
    s.finish()?;

    let mut s = root.section("repump")?;
    let floor = lifetime_floor(rates.d32_lifetime)?;
    let duration = s.float("duration", REPUMP_CALIBRATION_US, Check::Positive)?;
    let slope = match s.opt_float("slope", Check::NonNegative)? {
        Some(slope) => slope,
        None => {
            let measured_d2b = RateConstants::measured(Scheme::Shelving).r_dark_to_bright;
            let target = flip_probability(measured_d2b, REPUMP_CALIBRATION_US);
            calibrate_repump_slope(floor, REPUMP_POWER_UW, REPUMP_CALIBRATION_US, target)
                .map_err(|e| s.error("slope", format!("default calibration failed: {e}")))?
        }
    };
    s.finish()?;
    let repump = RepumpConfig {
        floor,
        slope,
        duration,
    };

    let mut s = root.section("fit")?;
    let kind = match s.opt_string("kind")?.as_deref() {
        None => None,
        Some("flip") => Some(FitKind::Flip),
        Some("ramsey") => Some(FitKind::Ramsey),
        Some(other) => {
            return Err(s.error(
                "kind",
                format!("unknown fit kind {other:?} (flip | ramsey)"),
            ))
        }
    };
    let fit = match s.opt_string("data")? {
        Some(path) => {
            let kind = kind.ok_or_else(|| s.error("kind", "required when data is given"))?;
            for key in ["points", "trials", "plateau"] {
                if s.table.contains_key(key) {
                    return Err(s.error(key, "only used for synthetic data"));
                }
            }
            FitSource::Data {
                kind,
                path: base_dir.join(path),
            }
        }
        None => {
            if kind == Some(FitKind::Ramsey) {
                return Err(s.error(
                    "data",
                    "required for ramsey fits; synthetic fringes come from [midcircuit]",
                ));
            }
            let points = s.uint("points", 8)?;
            if points < 3 {
                return Err(s.error("points", "at least 3 durations are needed"));
            }
            let trials = s.uint("trials", 5000)?;
            if trials == 0 {
                return Err(s.error("trials", "must be >= 1"));
            }
            FitSource::Synthetic {
                points: points as usize,
                trials,
                plateau: s.float("plateau", 0.75, Check::Probability)?,
            }
        }
    };
    s.finish()?;

    let mut s = root.section("midcircuit")?;
    let transfer_error = match s.opt_float("transfer_error", Check::Probability)? {
        Some(e) => e,
        None => two_step_transfer_error(1e-2, 1e-2)?,
    };
    let mut base = MidcircuitConfig {
        sequence: Sequence::ShelveDetect,
        wait: s.float("wait", DETECTION_DURATION_US, Check::Positive)?,
        t2_ground: s.float(
            "t2_ground",
            crate::midcircuit::GROUND_T2_US,
            Check::Positive,
        )?,
        t2_zeeman: s.float(
            "t2_zeeman",
            crate::midcircuit::ZEEMAN_T2_US,
            Check::Positive,
        )?,
        t_lightshift: 1.0,
        transfer_error,
        envelope: s.parsed::<Envelope>("envelope")?.unwrap_or_default(),
    };
    let explicit = s.opt_float("t_lightshift", Check::Positive)?;
    let target = s.opt_float("target_contrast", Check::Probability)?;
    base.t_lightshift = match (explicit, target) {
        (Some(_), Some(_)) => {
            return Err(s.error(
                "target_contrast",
                "give either t_lightshift or target_contrast",
            ))
        }
        (Some(t), None) => t,
        (None, target) => calibrate_lightshift(&base, target.unwrap_or(SHELVE_DETECT_CONTRAST))
            .map_err(|e| s.error("target_contrast", e.to_string()))?,
    };
    let phases = s.uint("phases", 16)?;
    if phases < 3 {
        return Err(s.error("phases", "at least 3 phases are needed"));
    }
    let shots_per_phase = s.uint("shots_per_phase", 1000)?;
    if shots_per_phase == 0 {
        return Err(s.error("shots_per_phase", "must be >= 1"));
    }
    s.finish()?;
    let midcircuit = MidcircuitSettings {
        base,
        phases: phases as usize,
        shots_per_phase,
    };

    let mut s = root.section("outputs")?;
    let mut outputs: BTreeMap<String, String> = OUTPUT_KEYS
        .iter()
        .map(|&(key, ext)| (key.to_string(), format!("{key}.{ext}")))
        .collect();
    for &(key, _) in OUTPUT_KEYS {
        if let Some(name) = s.opt_string(key)? {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(s.error(key, "must be a plain file name"));
            }
            outputs.insert(key.to_string(), name);
        }
    }
    s.finish()?;
    let mut names: Vec<&String> = outputs.values().collect();
    names.sort();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::config(
            "outputs",
            format!("file name {:?} used twice", w[0]),
        ));
    }

    root.finish()?;
    Ok(ExperimentConfig {
        scheme,
        rates,
        model,
        budget,
        branching,
        sweep,
        repump,
        fit,
        midcircuit,
        shots,
        seed,
        analyses,
        outputs,
    })
}
