//! Analytic photon-count distributions and threshold detection errors.
//!
//! The count model keeps at most one leakage event per shot: the exact
//! no-flip Poisson term plus the flip-time integral of the mixed Poisson
//! with mean `λ_pre·t + λ_post·(T − t)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::physics::{collected_photon_rate, RateConstants};
use crate::quadrature::integrate_vec;
use crate::trajectory::{DetectionModel, QubitState};

/// Allowed Poisson tail mass beyond the truncation point.
pub const TAIL_TOLERANCE: f64 = 1e-12;
/// Allowed deviation of a PMF's total mass from one.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;
/// Absolute accuracy target of the flip-time integral, per bin.
pub const QUADRATURE_TOLERANCE: f64 = 1e-12;

/// Probability mass over photon numbers `0..=n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountPmf {
    probs: Vec<f64>,
}

impl CountPmf {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Normalization {
                deviation: 1.0,
                n_max: 0,
            });
        }
        if let Some(p) = probs.iter().find(|p| p.is_nan() || **p < 0.0) {
            return Err(Error::invalid("probs", format!("negative or NaN mass {p}")));
        }
        let deviation = (probs.iter().sum::<f64>() - 1.0).abs();
        if deviation > NORMALIZATION_TOLERANCE {
            return Err(Error::Normalization {
                deviation,
                n_max: probs.len() - 1,
            });
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn get(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// `P(n <= threshold)`.
    pub fn at_most(&self, threshold: usize) -> f64 {
        self.probs.iter().take(threshold + 1).sum()
    }

    /// `P(n > threshold)`, summed from the top so small tails keep precision.
    pub fn above(&self, threshold: usize) -> f64 {
        self.probs.iter().skip(threshold + 1).rev().sum()
    }
}

/// Poisson probabilities `P(n; mean)` for `n = 0..=n_max`, evaluated in log space.
pub fn poisson_pmf(mean: f64, n_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_max + 1];
    fill_poisson(mean, &mut out);
    out
}

fn fill_poisson(mean: f64, out: &mut [f64]) {
    if mean <= 0.0 {
        out.fill(0.0);
        out[0] = 1.0;
        return;
    }
    let ln_mean = mean.ln();
    let mut ln_fact = 0.0;
    for (n, slot) in out.iter_mut().enumerate() {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        *slot = (n as f64 * ln_mean - mean - ln_fact).exp();
    }
}

/// Smallest `n` whose Poisson tail `P(N > n)` at `mean` is below `tail`.
pub fn poisson_truncation(mean: f64, tail: f64) -> usize {
    if mean <= 0.0 {
        return 0;
    }
    // walk far enough past the mean that the remaining terms are negligible
    let mut terms = Vec::new();
    let ln_mean = mean.ln();
    let mut ln_fact = 0.0;
    let mut n = 0usize;
    loop {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        let term = (n as f64 * ln_mean - mean - ln_fact).exp();
        terms.push(term);
        if n as f64 > mean && term < tail * 1e-6 {
            break;
        }
        n += 1;
    }
    let mut suffix = 0.0;
    let mut answer = terms.len() - 1;
    for k in (0..terms.len()).rev() {
        // suffix currently holds P(N > k)
        if suffix < tail {
            answer = k;
        } else {
            break;
        }
        suffix += terms[k];
    }
    answer
}

/// Analytic count distribution of a shot prepared in `initial`.
pub fn count_pmf(model: &DetectionModel, initial: QubitState) -> Result<CountPmf> {
    model.validate()?;
    let duration = model.duration;
    let leak = model.leak_rate(initial);
    let pre = model.emission_rate(initial);
    let post = model.emission_rate(initial.flipped());
    let n_max = poisson_truncation(
        model.lambda_bright.max(model.lambda_background) * duration,
        TAIL_TOLERANCE,
    );

    let survive = (-leak * duration).exp();
    let mut probs: Vec<f64> = poisson_pmf(pre * duration, n_max)
        .into_iter()
        .map(|p| p * survive)
        .collect();

    if leak > 0.0 {
        let (flipped, _) = integrate_vec(
            |t, out| {
                fill_poisson(pre * t + post * (duration - t), out);
                let weight = leak * (-leak * t).exp();
                out.iter_mut().for_each(|p| *p *= weight);
            },
            0.0,
            duration,
            n_max + 1,
            QUADRATURE_TOLERANCE,
        );
        for (p, f) in probs.iter_mut().zip(flipped) {
            *p += f;
        }
    }
    CountPmf::new(probs)
}

/// Threshold detection errors; a shot reads bright iff its count exceeds `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub eps0: f64,
    pub eps1: f64,
    pub eps_avg: f64,
    pub threshold: usize,
}

impl ErrorReport {
    fn new(eps0: f64, eps1: f64, threshold: usize) -> Self {
        let eps0 = eps0.clamp(0.0, 1.0);
        let eps1 = eps1.clamp(0.0, 1.0);
        Self {
            eps0,
            eps1,
            eps_avg: 0.5 * (eps0 + eps1),
            threshold,
        }
    }
}

pub fn detection_errors(
    pmf_dark: &CountPmf,
    pmf_bright: &CountPmf,
    threshold: usize,
) -> ErrorReport {
    ErrorReport::new(
        pmf_dark.above(threshold),
        pmf_bright.at_most(threshold),
        threshold,
    )
}

/// Threshold minimizing the equal-prior average error; ties go to the smaller threshold.
pub fn optimal_threshold(pmf_dark: &CountPmf, pmf_bright: &CountPmf) -> ErrorReport {
    let top = pmf_dark.n_max().max(pmf_bright.n_max());
    let mut best = detection_errors(pmf_dark, pmf_bright, 0);
    for threshold in 1..=top {
        let report = detection_errors(pmf_dark, pmf_bright, threshold);
        // relative margin absorbs summation-order noise between equal candidates
        if report.eps_avg < best.eps_avg * (1.0 - 1e-12) {
            best = report;
        }
    }
    best
}

/// Optimal-threshold error of `model` at its own duration.
pub fn optimal_report(model: &DetectionModel) -> Result<ErrorReport> {
    let dark = count_pmf(model, QubitState::Dark)?;
    let bright = count_pmf(model, QubitState::Bright)?;
    Ok(optimal_threshold(&dark, &bright))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationPoint {
    pub duration: f64,
    pub report: ErrorReport,
}

fn check_grid(name: &'static str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(name, "grid is empty"));
    }
    for &x in grid {
        check_positive(name, x)?;
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(name, "grid must be strictly ascending"));
    }
    Ok(())
}

/// Optimal-threshold error at each duration of an ascending grid.
pub fn error_vs_duration(model: &DetectionModel, durations: &[f64]) -> Result<Vec<DurationPoint>> {
    check_grid("durations", durations)?;
    durations
        .par_iter()
        .map(|&duration| {
            let report = optimal_report(&model.with_duration(duration))?;
            Ok(DurationPoint { duration, report })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub efficiency: f64,
    pub lambda_bright: f64,
    pub duration: f64,
    pub report: ErrorReport,
}

/// Minimum over duration and threshold of the average error at each collection efficiency.
///
/// The bright rate is the collected rate `scatter · efficiency` plus
/// `background`. The duration grid locates the optimum, which is then
/// polished by golden-section search between the neighbouring grid points.
pub fn error_vs_efficiency(
    rates: &RateConstants,
    background: f64,
    efficiencies: &[f64],
    durations: &[f64],
) -> Result<Vec<EfficiencyPoint>> {
    check_grid("efficiencies", efficiencies)?;
    check_grid("durations", durations)?;
    efficiencies
        .par_iter()
        .map(|&efficiency| {
            let lambda_bright =
                collected_photon_rate(rates.saturated_scatter_rate, efficiency)? + background;
            let model = DetectionModel::new(
                lambda_bright,
                background,
                rates.r_bright_to_dark,
                rates.r_dark_to_bright,
                durations[0],
            )?;
            let (duration, report) = minimize_over_duration(&model, durations)?;
            Ok(EfficiencyPoint {
                efficiency,
                lambda_bright,
                duration,
                report,
            })
        })
        .collect()
}

/// Grid search plus golden-section polish of the optimal-threshold error in duration.
pub fn minimize_over_duration(
    model: &DetectionModel,
    durations: &[f64],
) -> Result<(f64, ErrorReport)> {
    check_grid("durations", durations)?;
    let eval = |t: f64| optimal_report(&model.with_duration(t));
    let mut best_index = 0;
    let mut best = eval(durations[0])?;
    for (i, &t) in durations.iter().enumerate().skip(1) {
        let report = eval(t)?;
        if report.eps_avg < best.eps_avg {
            best = report;
            best_index = i;
        }
    }
    let mut best_t = durations[best_index];
    let mut lo = durations[best_index.saturating_sub(1)];
    let mut hi = durations[(best_index + 1).min(durations.len() - 1)];
    if hi <= lo {
        return Ok((best_t, best));
    }

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    for _ in 0..40 {
        if f1.eps_avg < best.eps_avg {
            best = f1;
            best_t = x1;
        }
        if f2.eps_avg < best.eps_avg {
            best = f2;
            best_t = x2;
        }
        if hi - lo < 1e-6 * hi {
            break;
        }
        if f1.eps_avg <= f2.eps_avg {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(x2)?;
        }
    }
    Ok((best_t, best))
}
