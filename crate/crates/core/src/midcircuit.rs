//! Coherence of a qubit parked in the metastable Zeeman pair during a
//! mid-circuit detection window.

use std::str::FromStr;

use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::inference::BinomialPoint;
use crate::physics::{two_step_transfer_error, DETECTION_DURATION_US};
use crate::rng::substream;

/// Contrast reported for the shelve-with-detection-light sequence.
pub const SHELVE_DETECT_CONTRAST: f64 = 0.78;
pub const ZEEMAN_T2_US: f64 = 700.0;
pub const GROUND_T2_US: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sequence {
    /// Qubit stays in the ground hyperfine levels.
    Idle,
    /// Round trip through the metastable levels, no light.
    ShelveWait,
    /// Round trip with the detection lasers on while shelved.
    ShelveDetect,
}

impl Sequence {
    pub const ALL: [Sequence; 3] = [Sequence::Idle, Sequence::ShelveWait, Sequence::ShelveDetect];

    pub fn name(self) -> &'static str {
        match self {
            Sequence::Idle => "idle",
            Sequence::ShelveWait => "shelve_wait",
            Sequence::ShelveDetect => "shelve_detect",
        }
    }
}

impl FromStr for Sequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sequence::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::invalid("sequence", format!("unknown sequence {s:?}")))
    }
}

/// Shape of the coherence decay `f(t / T2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    #[default]
    Exponential,
    Gaussian,
}

impl Envelope {
    pub fn decay(self, t: f64, t2: f64) -> f64 {
        let x = t / t2;
        match self {
            Envelope::Exponential => (-x).exp(),
            Envelope::Gaussian => (-x * x).exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Envelope::Exponential => "exponential",
            Envelope::Gaussian => "gaussian",
        }
    }
}

impl FromStr for Envelope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Envelope::Exponential),
            "gaussian" => Ok(Envelope::Gaussian),
            _ => Err(Error::invalid(
                "envelope",
                format!("unknown envelope {s:?}"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MidcircuitConfig {
    pub sequence: Sequence,
    /// µs
    pub wait: f64,
    pub t2_ground: f64,
    pub t2_zeeman: f64,
    /// Dephasing time from light-shift noise while the detection light is on.
    pub t_lightshift: f64,
    /// Failure probability of each one-way transfer.
    pub transfer_error: f64,
    pub envelope: Envelope,
}

impl MidcircuitConfig {
    /// 70 µs window, 700 µs Zeeman coherence, two-pulse transfers at 1e-2 each,
    /// light-shift time calibrated to the reported shelve-and-detect contrast.
    pub fn reference(sequence: Sequence) -> Self {
        let mut cfg = MidcircuitConfig {
            sequence,
            wait: DETECTION_DURATION_US,
            t2_ground: GROUND_T2_US,
            t2_zeeman: ZEEMAN_T2_US,
            t_lightshift: f64::INFINITY,
            transfer_error: two_step_transfer_error(1e-2, 1e-2).expect("valid probabilities"),
            envelope: Envelope::Exponential,
        };
        cfg.t_lightshift =
            calibrate_lightshift(&cfg, SHELVE_DETECT_CONTRAST).expect("reference calibrates");
        cfg
    }

    pub fn with_sequence(mut self, sequence: Sequence) -> Self {
        self.sequence = sequence;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("wait", self.wait),
            ("t2_ground", self.t2_ground),
            ("t2_zeeman", self.t2_zeeman),
            ("t_lightshift", self.t_lightshift),
        ] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::invalid(name, format!("must be > 0, got {v}")));
            }
        }
        check_probability("transfer_error", self.transfer_error)
    }

    fn shelved_factor(&self) -> f64 {
        (1.0 - self.transfer_error).powi(2) * self.envelope.decay(self.wait, self.t2_zeeman)
    }
}

/// Fringe contrast expected after the configured sequence.
pub fn predicted_contrast(cfg: &MidcircuitConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(match cfg.sequence {
        Sequence::Idle => cfg.envelope.decay(cfg.wait, cfg.t2_ground),
        Sequence::ShelveWait => cfg.shelved_factor(),
        Sequence::ShelveDetect => {
            cfg.shelved_factor() * cfg.envelope.decay(cfg.wait, cfg.t_lightshift)
        }
    })
}

/// Light-shift dephasing time that brings the shelve-and-detect contrast to `target`.
pub fn calibrate_lightshift(cfg: &MidcircuitConfig, target: f64) -> Result<f64> {
    let probe = MidcircuitConfig {
        t_lightshift: 1.0,
        ..*cfg
    };
    probe.validate()?;
    let base = probe.shelved_factor();
    if !(target > 0.0 && target < base) {
        return Err(Error::invalid(
            "target",
            format!("contrast {target} must lie in (0, {base}) for the given Zeeman decay"),
        ));
    }
    let ln = (base / target).ln();
    Ok(match cfg.envelope {
        Envelope::Exponential => cfg.wait / ln,
        Envelope::Gaussian => cfg.wait / ln.sqrt(),
    })
}

/// Binomial Ramsey scan with success probability `(1 + C cos φ) / 2`.
pub fn simulate_ramsey(
    cfg: &MidcircuitConfig,
    phases: &[f64],
    shots: u64,
    seed: u64,
) -> Result<Vec<BinomialPoint>> {
    if shots == 0 {
        return Err(Error::NoShots);
    }
    let contrast = predicted_contrast(cfg)?;
    phases
        .par_iter()
        .enumerate()
        .map(|(i, &phase)| {
            if !phase.is_finite() {
                return Err(Error::invalid("phases", "non-finite phase"));
            }
            let p = (0.5 * (1.0 + contrast * phase.cos())).clamp(0.0, 1.0);
            let k = Binomial::new(shots, p)
                .map_err(|e| Error::invalid("phases", e.to_string()))?
                .sample(&mut substream(seed, i as u64));
            Ok(BinomialPoint {
                x: phase,
                probability: k as f64 / shots as f64,
                trials: shots,
            })
        })
        .collect()
}

/// `n` evenly spaced phases over one period.
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| std::f64::consts::TAU * k as f64 / n as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::fit_ramsey_fringe;
    use proptest::prelude::*;

    #[test]
    fn reference_contrasts() {
        let idle = predicted_contrast(&MidcircuitConfig::reference(Sequence::Idle)).unwrap();
        let wait = predicted_contrast(&MidcircuitConfig::reference(Sequence::ShelveWait)).unwrap();
        let detect =
            predicted_contrast(&MidcircuitConfig::reference(Sequence::ShelveDetect)).unwrap();
        assert!(idle > 0.999);
        assert!((wait - 0.904_656).abs() < 1e-5, "{wait}");
        assert!((detect - 0.78).abs() < 1e-12);
    }

    #[test]
    fn lightshift_calibration_values() {
        let mut cfg = MidcircuitConfig::reference(Sequence::ShelveDetect);
        assert!(
            (cfg.t_lightshift - 472.14).abs() < 0.01,
            "{}",
            cfg.t_lightshift
        );
        cfg.transfer_error = 0.0;
        let t = calibrate_lightshift(&cfg, 0.78).unwrap();
        assert!((t - 471.50).abs() < 0.01, "{t}");
        assert!(calibrate_lightshift(&cfg, 0.95).is_err());
    }

    #[test]
    fn gaussian_calibration_round_trips() {
        let mut cfg = MidcircuitConfig::reference(Sequence::ShelveDetect);
        cfg.envelope = Envelope::Gaussian;
        cfg.t_lightshift = calibrate_lightshift(&cfg, 0.6).unwrap();
        assert!((predicted_contrast(&cfg).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut cfg = MidcircuitConfig::reference(Sequence::Idle);
        cfg.t2_zeeman = 0.0;
        assert!(predicted_contrast(&cfg).is_err());
        let mut cfg = MidcircuitConfig::reference(Sequence::Idle);
        cfg.transfer_error = 1.2;
        assert!(predicted_contrast(&cfg).is_err());
    }

    #[test]
    fn full_contrast_at_zero_phase_is_certain() {
        let mut cfg = MidcircuitConfig::reference(Sequence::Idle);
        cfg.t2_ground = f64::INFINITY;
        let pts = simulate_ramsey(&cfg, &[0.0], 777, 1).unwrap();
        assert_eq!(pts[0].probability, 1.0);
        assert!(simulate_ramsey(&cfg, &[0.0], 0, 1).is_err());
    }

    #[test]
    fn ramsey_scan_deterministic() {
        let cfg = MidcircuitConfig::reference(Sequence::ShelveWait);
        let a = simulate_ramsey(&cfg, &phase_grid(16), 1000, 42).unwrap();
        assert_eq!(a, simulate_ramsey(&cfg, &phase_grid(16), 1000, 42).unwrap());
        assert_ne!(a, simulate_ramsey(&cfg, &phase_grid(16), 1000, 43).unwrap());
    }

    #[test]
    fn shelve_wait_fit_in_band() {
        let cfg = MidcircuitConfig::reference(Sequence::ShelveWait);
        let pts = simulate_ramsey(&cfg, &phase_grid(16), 1000, 7).unwrap();
        let c = fit_ramsey_fringe(&pts).unwrap().value("contrast");
        assert!((0.88..=0.94).contains(&c), "{c}");
    }

    #[test]
    fn round_trip_bias_below_ci() {
        for seq in Sequence::ALL {
            let cfg = MidcircuitConfig::reference(seq);
            let truth = predicted_contrast(&cfg).unwrap();
            let fits: Vec<_> = (0..20)
                .map(|rep| {
                    fit_ramsey_fringe(
                        &simulate_ramsey(&cfg, &phase_grid(16), 10_000, 100 + rep).unwrap(),
                    )
                    .unwrap()
                })
                .collect();
            let mean = fits.iter().map(|f| f.value("contrast")).sum::<f64>() / fits.len() as f64;
            let half = fits
                .iter()
                .map(|f| {
                    let p = f.param("contrast").unwrap();
                    0.5 * (p.ci_high - p.ci_low)
                })
                .sum::<f64>()
                / fits.len() as f64;
            assert!(
                (mean - truth).abs() < half,
                "{}: bias {} vs ci {}",
                seq.name(),
                mean - truth,
                half
            );
        }
    }

    fn arb_config() -> impl Strategy<Value = MidcircuitConfig> {
        (
            1.0f64..500.0,
            10.0f64..1e6,
            10.0f64..1e4,
            10.0f64..1e4,
            0.0f64..0.2,
            any::<bool>(),
        )
            .prop_map(
                |(wait, t2_ground, t2_zeeman, t_lightshift, transfer_error, gaussian)| {
                    MidcircuitConfig {
                        sequence: Sequence::Idle,
                        wait,
                        t2_ground,
                        t2_zeeman,
                        t_lightshift,
                        transfer_error,
                        envelope: if gaussian {
                            Envelope::Gaussian
                        } else {
                            Envelope::Exponential
                        },
                    }
                },
            )
    }

    proptest! {
        #[test]
        fn contrast_in_unit_interval(cfg in arb_config()) {
            for seq in Sequence::ALL {
                let c = predicted_contrast(&cfg.with_sequence(seq)).unwrap();
                prop_assert!((0.0..=1.0).contains(&c));
            }
        }

        #[test]
        fn shelved_sequences_ordered(cfg in arb_config()) {
            let wait = predicted_contrast(&cfg.with_sequence(Sequence::ShelveWait)).unwrap();
            let detect = predicted_contrast(&cfg.with_sequence(Sequence::ShelveDetect)).unwrap();
            prop_assert!(wait >= detect);
            // the ground levels outlive the Zeeman pair whenever t2_ground >= t2_zeeman
            if cfg.t2_ground >= cfg.t2_zeeman {
                let idle = predicted_contrast(&cfg.with_sequence(Sequence::Idle)).unwrap();
                prop_assert!(idle >= wait);
            }
        }

        #[test]
        fn contrast_non_increasing(cfg in arb_config(), longer in 1.0f64..3.0, faster in 0.3f64..1.0) {
            for seq in Sequence::ALL {
                let base = cfg.with_sequence(seq);
                let c = predicted_contrast(&base).unwrap();
                let waited = MidcircuitConfig { wait: base.wait * longer, ..base };
                prop_assert!(predicted_contrast(&waited).unwrap() <= c);
                let dephased = MidcircuitConfig {
                    t2_ground: base.t2_ground * faster,
                    t2_zeeman: base.t2_zeeman * faster,
                    t_lightshift: base.t_lightshift * faster,
                    ..base
                };
                prop_assert!(predicted_contrast(&dephased).unwrap() <= c);
            }
        }
    }
}
