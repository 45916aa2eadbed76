//! Shot classification and fidelity reporting.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::trajectory::{fold_shots, CountHistogram, DetectionModel, QubitState};

/// Bright iff the photon count strictly exceeds `threshold`.
pub fn classify_threshold(count: usize, threshold: usize) -> QubitState {
    if count > threshold {
        QubitState::Bright
    } else {
        QubitState::Dark
    }
}

fn count_log(rate: f64, count: usize) -> f64 {
    match count {
        0 => 0.0,
        k if rate > 0.0 => k as f64 * rate.ln(),
        _ => f64::NEG_INFINITY,
    }
}

/// `ln ∫_a^{a+w} e^{-c t} dt` without overflow for either sign of `c`.
fn ln_exp_integral(c: f64, a: f64, w: f64) -> f64 {
    if w <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let x = c * w;
    let ln_phi = if x.abs() < 1e-12 {
        w.ln()
    } else if c > 0.0 {
        (-(-x).exp_m1() / c).ln()
    } else {
        // e^{|c| w} (1 - e^{-|c| w}) / |c|
        -x + ((-(x.abs())).exp_m1() / c).ln()
    };
    -c * a + ln_phi
}

fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn check_timestamps(photons: &[f64], duration: f64) -> Result<()> {
    if let Some(t) = photons.iter().find(|t| !(0.0..=duration).contains(*t)) {
        return Err(Error::Timestamps(format!(
            "{t} lies outside [0, {duration}]"
        )));
    }
    if photons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Timestamps("timestamps are not sorted".into()));
    }
    Ok(())
}

/// Log density of an arrival-time record under the at-most-one-flip model.
///
/// The flip-time integral is piecewise exponential between consecutive
/// photons and is summed segment by segment in closed form.
pub fn shot_log_likelihood(
    photons: &[f64],
    model: &DetectionModel,
    initial: QubitState,
) -> Result<f64> {
    check_timestamps(photons, model.duration)?;
    let duration = model.duration;
    let total = photons.len();
    let leak = model.leak_rate(initial);
    let pre = model.emission_rate(initial);
    let post = model.emission_rate(initial.flipped());

    let no_flip = -leak * duration + count_log(pre, total) - pre * duration;
    if leak <= 0.0 {
        return Ok(no_flip);
    }

    // flip inside segment j: j photons were emitted before it at rate `pre`
    let decay = leak + pre - post;
    let base = leak.ln() - post * duration;
    let edges = std::iter::once(0.0)
        .chain(photons.iter().copied())
        .chain(std::iter::once(duration));
    let starts: Vec<f64> = edges.collect();
    let segments = starts.windows(2).enumerate().map(|(j, w)| {
        base + count_log(pre, j)
            + count_log(post, total - j)
            + ln_exp_integral(decay, w[0], w[1] - w[0])
    });
    Ok(log_sum_exp(std::iter::once(no_flip).chain(segments)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodDecision {
    pub state: QubitState,
    /// `ln L(bright) - ln L(dark)`.
    pub llr: f64,
}

/// Likelihood-ratio decision between a dark-prepared and a bright-prepared hypothesis.
///
/// Ties, including records impossible under both hypotheses, read dark.
pub fn classify_likelihood(
    photons: &[f64],
    model_dark: &DetectionModel,
    model_bright: &DetectionModel,
) -> Result<LikelihoodDecision> {
    let ll_bright = shot_log_likelihood(photons, model_bright, QubitState::Bright)?;
    let ll_dark = shot_log_likelihood(photons, model_dark, QubitState::Dark)?;
    let llr = ll_bright - ll_dark;
    let state = if llr > 0.0 {
        QubitState::Bright
    } else {
        QubitState::Dark
    };
    Ok(LikelihoodDecision { state, llr })
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    if successes > trials {
        return Err(Error::invalid(
            "successes",
            format!("{successes} exceeds {trials} trials"),
        ));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::invalid(
            "confidence",
            format!("{confidence} is not in (0, 1)"),
        ));
    }
    let z = Normal::standard().inverse_cdf(0.5 + 0.5 * confidence);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2n = z * z / n;
    let center = (p + 0.5 * z2n) / (1.0 + z2n);
    let half = z / (1.0 + z2n) * (p * (1.0 - p) / n + 0.25 * z2n / n).sqrt();
    let low = if successes == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let high = if successes == trials {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    Ok((low, high))
}

/// A recorded shot with its prepared state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledShot {
    pub prepared: QubitState,
    pub photons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Discriminator {
    Threshold {
        threshold: usize,
    },
    Likelihood {
        dark: DetectionModel,
        bright: DetectionModel,
    },
}

impl Discriminator {
    /// Likelihood discriminator whose hypotheses share one detection model.
    pub fn likelihood(model: DetectionModel) -> Self {
        Discriminator::Likelihood {
            dark: model,
            bright: model,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Discriminator::Threshold { .. } => "threshold",
            Discriminator::Likelihood { .. } => "likelihood",
        }
    }

    pub fn classify(&self, photons: &[f64]) -> Result<QubitState> {
        match self {
            Discriminator::Threshold { threshold } => {
                Ok(classify_threshold(photons.len(), *threshold))
            }
            Discriminator::Likelihood { dark, bright } => {
                Ok(classify_likelihood(photons, dark, bright)?.state)
            }
        }
    }
}

/// Misclassification counts per prepared state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorTally {
    pub dark_shots: u64,
    pub dark_errors: u64,
    pub bright_shots: u64,
    pub bright_errors: u64,
}

impl ErrorTally {
    pub fn record(&mut self, prepared: QubitState, read: QubitState) {
        let wrong = u64::from(prepared != read);
        match prepared {
            QubitState::Dark => {
                self.dark_shots += 1;
                self.dark_errors += wrong;
            }
            QubitState::Bright => {
                self.bright_shots += 1;
                self.bright_errors += wrong;
            }
        }
    }

    pub fn merge(self, other: ErrorTally) -> ErrorTally {
        ErrorTally {
            dark_shots: self.dark_shots + other.dark_shots,
            dark_errors: self.dark_errors + other.dark_errors,
            bright_shots: self.bright_shots + other.bright_shots,
            bright_errors: self.bright_errors + other.bright_errors,
        }
    }

    pub fn report(&self, discriminator: &str) -> Result<DiscriminationReport> {
        match (self.dark_shots, self.bright_shots) {
            (0, 0) => return Err(Error::EmptyDataset),
            (0, _) => {
                return Err(Error::SingleClass {
                    present: QubitState::Bright,
                })
            }
            (_, 0) => {
                return Err(Error::SingleClass {
                    present: QubitState::Dark,
                })
            }
            _ => {}
        }
        let eps0 = self.dark_errors as f64 / self.dark_shots as f64;
        let eps1 = self.bright_errors as f64 / self.bright_shots as f64;
        Ok(DiscriminationReport {
            eps0,
            eps1,
            eps_avg: 0.5 * (eps0 + eps1),
            ci0: wilson_interval(self.dark_errors, self.dark_shots, 0.95)?,
            ci1: wilson_interval(self.bright_errors, self.bright_shots, 0.95)?,
            dark_shots: self.dark_shots,
            bright_shots: self.bright_shots,
            discriminator: discriminator.to_string(),
        })
    }
}

/// Empirical per-state errors with 95 % Wilson intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminationReport {
    pub eps0: f64,
    pub eps1: f64,
    pub eps_avg: f64,
    pub ci0: (f64, f64),
    pub ci1: (f64, f64),
    pub dark_shots: u64,
    pub bright_shots: u64,
    pub discriminator: String,
}

impl DiscriminationReport {
    /// Standard error of `eps_avg` under independent binomial sampling.
    pub fn eps_avg_std_error(&self) -> f64 {
        let var = |p: f64, n: u64| p * (1.0 - p) / n as f64;
        0.5 * (var(self.eps0, self.dark_shots) + var(self.eps1, self.bright_shots)).sqrt()
    }

    /// Wilson-style interval for the equal-weight mean, from the per-state intervals.
    pub fn eps_avg_interval(&self) -> (f64, f64) {
        (
            0.5 * (self.ci0.0 + self.ci1.0),
            0.5 * (self.ci0.1 + self.ci1.1),
        )
    }
}

pub fn evaluate_discriminator(
    shots: &[LabeledShot],
    discriminator: &Discriminator,
) -> Result<DiscriminationReport> {
    let mut tally = ErrorTally::default();
    for shot in shots {
        tally.record(shot.prepared, discriminator.classify(&shot.photons)?);
    }
    tally.report(discriminator.label())
}

/// Threshold report computed from count histograms of dark- and bright-prepared shots.
pub fn threshold_report(
    dark: &CountHistogram,
    bright: &CountHistogram,
    threshold: usize,
) -> Result<DiscriminationReport> {
    let tally = ErrorTally {
        dark_shots: dark.shots,
        dark_errors: dark.above(threshold),
        bright_shots: bright.shots,
        bright_errors: bright.shots - bright.above(threshold),
    };
    tally.report("threshold")
}

/// Best threshold on the given shot histograms; ties go to the smaller threshold.
pub fn best_threshold_report(
    dark: &CountHistogram,
    bright: &CountHistogram,
) -> Result<(usize, DiscriminationReport)> {
    let top = dark.max_count().max(bright.max_count());
    let mut best = (0, threshold_report(dark, bright, 0)?);
    for t in 1..=top {
        let r = threshold_report(dark, bright, t)?;
        if r.eps_avg < best.1.eps_avg {
            best = (t, r);
        }
    }
    Ok(best)
}

/// Simulated shots of one prepared state, classified by every discriminator on the same records.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedBatch {
    pub histogram: CountHistogram,
    pub errors: Vec<u64>,
}

pub fn simulate_and_classify(
    model: &DetectionModel,
    prepared: QubitState,
    shots: u64,
    master_seed: u64,
    discriminators: &[Discriminator],
) -> Result<ClassifiedBatch> {
    let k = discriminators.len();
    let (histogram, errors) = fold_shots(
        model,
        prepared,
        shots,
        master_seed,
        || (CountHistogram::default(), vec![0u64; k]),
        |(mut h, mut e), _, traj| {
            h.record(traj.photon_count());
            for (slot, d) in e.iter_mut().zip(discriminators) {
                let read = d
                    .classify(&traj.photons)
                    .expect("simulated photon records are sorted and inside the window");
                *slot += u64::from(read != prepared);
            }
            (h, e)
        },
        |(ha, ea), (hb, eb)| {
            (
                ha.merge(hb),
                ea.iter().zip(&eb).map(|(a, b)| a + b).collect(),
            )
        },
    )?;
    Ok(ClassifiedBatch { histogram, errors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::Scheme;
    use crate::quadrature::integrate;
    use crate::rng::substream;
    use rand::Rng;

    fn leak_free() -> DetectionModel {
        DetectionModel::new(0.18, 0.0, 0.0, 0.0, 70.0).unwrap()
    }

    #[test]
    fn threshold_rule() {
        assert_eq!(classify_threshold(0, 0), QubitState::Dark);
        assert_eq!(classify_threshold(2, 1), QubitState::Bright);
        assert_eq!(classify_threshold(1, 1), QubitState::Dark);
    }

    #[test]
    fn leak_free_likelihoods() {
        let m = leak_free();
        let ll = shot_log_likelihood(&[], &m, QubitState::Bright).unwrap();
        assert_eq!(ll, -0.18 * 70.0);
        let photons = [1.0, 5.5, 30.0, 69.0];
        let ll = shot_log_likelihood(&photons, &m, QubitState::Bright).unwrap();
        assert!((ll - (4.0 * 0.18f64.ln() - 0.18 * 70.0)).abs() < 1e-12);
    }

    #[test]
    fn bad_timestamps_rejected() {
        let m = leak_free();
        assert!(matches!(
            shot_log_likelihood(&[3.0, 1.0], &m, QubitState::Bright),
            Err(Error::Timestamps(_))
        ));
        assert!(shot_log_likelihood(&[71.0], &m, QubitState::Bright).is_err());
        assert!(shot_log_likelihood(&[-0.5], &m, QubitState::Bright).is_err());
    }

    /// Direct numerical integration of the one-flip density over the flip time.
    fn likelihood_by_quadrature(photons: &[f64], m: &DetectionModel, initial: QubitState) -> f64 {
        let (r, pre, post, t_end) = (
            m.leak_rate(initial),
            m.emission_rate(initial),
            m.emission_rate(initial.flipped()),
            m.duration,
        );
        let k_total = photons.len() as i32;
        let density = |t: f64| {
            let k = photons.iter().filter(|&&x| x < t).count() as i32;
            r * (-r * t).exp()
                * (-pre * t - post * (t_end - t)).exp()
                * pre.powi(k)
                * post.powi(k_total - k)
        };
        let mut edges = vec![0.0];
        edges.extend_from_slice(photons);
        edges.push(t_end);
        let flip: f64 = edges
            .windows(2)
            .map(|w| integrate(density, w[0], w[1], 1e-30))
            .sum();
        (-r * t_end).exp() * pre.powi(k_total) * (-pre * t_end).exp() + flip
    }

    #[test]
    fn burst_then_silence_matches_quadrature_posterior() {
        let mut m = DetectionModel::reference(Scheme::Shelving);
        m.lambda_bright = 1.0266;
        let photons = [0.4, 1.1, 1.9, 2.2, 3.0, 3.7, 4.1, 5.0];
        for initial in [QubitState::Bright, QubitState::Dark] {
            let closed = shot_log_likelihood(&photons, &m, initial).unwrap();
            let quad = likelihood_by_quadrature(&photons, &m, initial).ln();
            assert!(
                (closed - quad).abs() < 1e-9,
                "{initial:?}: {closed} vs {quad}"
            );
        }
        let decision = classify_likelihood(&photons, &m, &m).unwrap();
        let llr = likelihood_by_quadrature(&photons, &m, QubitState::Bright).ln()
            - likelihood_by_quadrature(&photons, &m, QubitState::Dark).ln();
        assert!((decision.llr - llr).abs() < 1e-9);
        assert_eq!(
            decision.state,
            if llr > 0.0 {
                QubitState::Bright
            } else {
                QubitState::Dark
            }
        );
    }

    #[test]
    fn empty_record_reads_dark() {
        let m = DetectionModel::reference(Scheme::Shelving);
        let d = classify_likelihood(&[], &m, &m).unwrap();
        assert_eq!(d.state, QubitState::Dark);
        assert!(d.llr < 0.0);
    }

    /// Average of L(x)/q(x) over records drawn from a homogeneous-Poisson mixture q.
    fn self_normalization(m: &DetectionModel, initial: QubitState, samples: u64) -> (f64, f64) {
        let rates = [
            m.lambda_bright,
            0.5 * m.lambda_bright,
            0.2 * m.lambda_bright,
            0.05 * m.lambda_bright,
            0.005,
        ];
        let t_end = m.duration;
        let ln_q = |k: usize| {
            let terms = rates.iter().map(|&r| k as f64 * r.ln() - r * t_end);
            log_sum_exp(terms) - (rates.len() as f64).ln()
        };
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for i in 0..samples {
            let mut rng = substream(77, i);
            let rate = rates[rng.random_range(0..rates.len())];
            let mut photons = Vec::new();
            let mut t = 0.0;
            loop {
                t += -(1.0 - rng.random::<f64>()).ln() / rate;
                if t >= t_end {
                    break;
                }
                photons.push(t);
            }
            let w =
                (shot_log_likelihood(&photons, m, initial).unwrap() - ln_q(photons.len())).exp();
            sum += w;
            sum_sq += w * w;
        }
        let n = samples as f64;
        let mean = sum / n;
        (mean, ((sum_sq / n - mean * mean) / n).sqrt())
    }

    #[test]
    fn likelihood_integrates_to_one() {
        for scheme in [Scheme::Shelving, Scheme::Hyperfine] {
            let m = DetectionModel::reference(scheme);
            for initial in [QubitState::Bright, QubitState::Dark] {
                let (mean, se) = self_normalization(&m, initial, 100_000);
                assert!(
                    (mean - 1.0).abs() < 4.0 * se.max(1e-4),
                    "{scheme:?} {initial:?}: {mean} ± {se}"
                );
            }
        }
    }

    #[test]
    fn wilson_values() {
        let (lo, hi) = wilson_interval(5, 100, 0.95).unwrap();
        assert!((lo - 0.021_543_679_154_367_97).abs() < 1e-12);
        assert!((hi - 0.111_750_469_231_919_15).abs() < 1e-12);
        assert_eq!(wilson_interval(0, 40, 0.95).unwrap().0, 0.0);
        assert_eq!(wilson_interval(40, 40, 0.95).unwrap().1, 1.0);
        assert!(wilson_interval(1, 0, 0.95).is_err());
        assert!(wilson_interval(0, 0, 0.95).is_err());
        assert!(wilson_interval(5, 4, 0.95).is_err());
    }

    #[test]
    fn wilson_width_scales_inverse_sqrt() {
        for (k, n) in [(30u64, 1000u64), (7, 500), (500, 1000)] {
            let (a, b) = wilson_interval(k, n, 0.95).unwrap();
            let (c, d) = wilson_interval(4 * k, 4 * n, 0.95).unwrap();
            let ratio = (b - a) / (d - c);
            assert!((ratio / 2.0 - 1.0).abs() < 0.1, "ratio {ratio}");
        }
    }

    #[test]
    fn perfect_separation_dataset() {
        let shots: Vec<LabeledShot> = (0..50)
            .flat_map(|_| {
                [
                    LabeledShot {
                        prepared: QubitState::Dark,
                        photons: vec![],
                    },
                    LabeledShot {
                        prepared: QubitState::Bright,
                        photons: vec![1.0, 2.0, 3.0],
                    },
                ]
            })
            .collect();
        let r = evaluate_discriminator(&shots, &Discriminator::Threshold { threshold: 1 }).unwrap();
        assert_eq!((r.eps0, r.eps1), (0.0, 0.0));
        assert_eq!(r.ci0.0, 0.0);
        assert!(r.ci0.1 > 0.0 && r.ci1.1 > 0.0);
        assert_eq!(r.dark_shots, 50);
    }

    #[test]
    fn single_class_dataset_rejected() {
        let shots = vec![LabeledShot {
            prepared: QubitState::Dark,
            photons: vec![],
        }];
        assert!(matches!(
            evaluate_discriminator(&shots, &Discriminator::Threshold { threshold: 0 }),
            Err(Error::SingleClass { .. })
        ));
        assert!(matches!(
            evaluate_discriminator(&[], &Discriminator::Threshold { threshold: 0 }),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn histogram_threshold_reports_agree_with_shot_lists() {
        let m = DetectionModel::reference(Scheme::Hyperfine);
        let d = Discriminator::Threshold { threshold: 0 };
        let dark = simulate_and_classify(&m, QubitState::Dark, 5_000, 1, std::slice::from_ref(&d))
            .unwrap();
        let bright =
            simulate_and_classify(&m, QubitState::Bright, 5_000, 2, std::slice::from_ref(&d))
                .unwrap();
        let r = threshold_report(&dark.histogram, &bright.histogram, 0).unwrap();
        assert_eq!(r.eps0, dark.errors[0] as f64 / 5_000.0);
        assert_eq!(r.eps1, bright.errors[0] as f64 / 5_000.0);
        let (t, best) = best_threshold_report(&dark.histogram, &bright.histogram).unwrap();
        assert!(best.eps_avg <= r.eps_avg);
        assert!(t <= 3);
    }
}
