//! Weighted least-squares fits of binomial flip curves and Ramsey fringes.
//!
//! Both fits use a damped Gauss-Newton (Levenberg-Marquardt) iteration with
//! analytic Jacobians, seeded from a coarse grid. Confidence intervals come
//! from the linearized covariance at the optimum scaled by the reduced
//! chi-square, with Student-t quantiles.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::physics::flip_probability;

/// One measured binomial proportion at abscissa `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinomialPoint {
    pub x: f64,
    pub probability: f64,
    pub trials: u64,
}

impl BinomialPoint {
    /// Inverse binomial variance with a Laplace-smoothed proportion.
    pub fn weight(&self) -> f64 {
        let n = self.trials as f64;
        let k = (self.probability * n).round();
        let p = (k + 1.0) / (n + 2.0);
        n / (p * (1.0 - p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitParam {
    pub name: String,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<FitParam>,
    /// `sqrt(Σ w (y - f)²)`.
    pub residual_norm: f64,
    pub dof: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<&FitParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, name: &str) -> f64 {
        self.param(name).map_or(f64::NAN, |p| p.value)
    }

    /// Does the 95 % interval of `name` contain `truth`?
    pub fn covers(&self, name: &str, truth: f64) -> bool {
        self.param(name)
            .is_some_and(|p| p.ci_low <= truth && truth <= p.ci_high)
    }
}

/// A two-parameter curve with an analytic gradient and box constraints.
pub trait CurveModel {
    const NAMES: [&'static str; 2];

    fn value(&self, x: f64, p: &[f64; 2]) -> f64;
    fn gradient(&self, x: f64, p: &[f64; 2]) -> [f64; 2];
    fn project(&self, p: &mut [f64; 2]);
    /// Range reported for a parameter the data cannot determine.
    fn feasible(&self, index: usize) -> (f64, f64);
    /// Whether interval endpoints are clipped to the feasible range.
    fn clip_interval(&self, index: usize) -> bool;
}

/// `plateau · (1 - exp(-rate · t))`; parameters `[rate, plateau]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlipCurveModel;

impl CurveModel for FlipCurveModel {
    const NAMES: [&'static str; 2] = ["rate", "plateau"];

    fn value(&self, t: f64, p: &[f64; 2]) -> f64 {
        p[1] * flip_probability(p[0], t)
    }

    fn gradient(&self, t: f64, p: &[f64; 2]) -> [f64; 2] {
        [p[1] * t * (-p[0] * t).exp(), flip_probability(p[0], t)]
    }

    fn project(&self, p: &mut [f64; 2]) {
        p[0] = p[0].max(0.0);
        p[1] = p[1].clamp(0.0, 1.0);
    }

    fn feasible(&self, index: usize) -> (f64, f64) {
        [(0.0, f64::INFINITY), (0.0, 1.0)][index]
    }

    fn clip_interval(&self, _: usize) -> bool {
        true
    }
}

/// `(1 + contrast · cos(φ + offset)) / 2`; parameters `[contrast, offset]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RamseyModel;

impl CurveModel for RamseyModel {
    const NAMES: [&'static str; 2] = ["contrast", "offset"];

    fn value(&self, phase: f64, p: &[f64; 2]) -> f64 {
        0.5 * (1.0 + p[0] * (phase + p[1]).cos())
    }

    fn gradient(&self, phase: f64, p: &[f64; 2]) -> [f64; 2] {
        [
            0.5 * (phase + p[1]).cos(),
            -0.5 * p[0] * (phase + p[1]).sin(),
        ]
    }

    fn project(&self, p: &mut [f64; 2]) {
        p[0] = p[0].clamp(0.0, 1.0);
        p[1] = wrap_phase(p[1]);
    }

    fn feasible(&self, index: usize) -> (f64, f64) {
        [(0.0, 1.0), (-PI, PI)][index]
    }

    fn clip_interval(&self, index: usize) -> bool {
        index == 0
    }
}

fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

struct Weighted {
    x: f64,
    y: f64,
    w: f64,
}

fn chi2<M: CurveModel>(model: &M, data: &[Weighted], p: &[f64; 2]) -> f64 {
    data.iter()
        .map(|d| d.w * (d.y - model.value(d.x, p)).powi(2))
        .sum()
}

fn normal_equations<M: CurveModel>(
    model: &M,
    data: &[Weighted],
    p: &[f64; 2],
) -> (DMatrix<f64>, DVector<f64>) {
    let mut a = DMatrix::zeros(2, 2);
    let mut g = DVector::zeros(2);
    for d in data {
        let grad = model.gradient(d.x, p);
        let r = d.y - model.value(d.x, p);
        for i in 0..2 {
            g[i] += d.w * grad[i] * r;
            for j in 0..2 {
                a[(i, j)] += d.w * grad[i] * grad[j];
            }
        }
    }
    (a, g)
}

struct LmOutcome {
    params: [f64; 2],
    chi2: f64,
    iterations: usize,
    converged: bool,
}

const MAX_ITERATIONS: usize = 500;

fn levenberg_marquardt<M: CurveModel>(model: &M, data: &[Weighted], init: [f64; 2]) -> LmOutcome {
    let mut p = init;
    model.project(&mut p);
    let mut cost = chi2(model, data, &p);
    let mut damping = 1e-3;
    for iteration in 1..=MAX_ITERATIONS {
        if cost <= 1e-300 {
            return LmOutcome {
                params: p,
                chi2: cost,
                iterations: iteration,
                converged: true,
            };
        }
        let (a, g) = normal_equations(model, data, &p);
        let scale = a.diagonal().max();
        if scale <= 0.0 || g.norm() <= 1e-15 * cost.sqrt() * scale.sqrt() {
            return LmOutcome {
                params: p,
                chi2: cost,
                iterations: iteration,
                converged: true,
            };
        }
        let mut accepted = false;
        while damping < 1e16 {
            let mut damped = a.clone();
            for i in 0..2 {
                damped[(i, i)] += damping * a[(i, i)].max(1e-12 * scale);
            }
            let Some(step) = damped.lu().solve(&g) else {
                damping *= 10.0;
                continue;
            };
            let mut trial = [p[0] + step[0], p[1] + step[1]];
            model.project(&mut trial);
            let trial_cost = chi2(model, data, &trial);
            if trial_cost < cost {
                let gain = cost - trial_cost;
                let moved =
                    (0..2).all(|i| (trial[i] - p[i]).abs() <= 1e-12 * (p[i].abs() + 1e-300));
                p = trial;
                let previous = cost;
                cost = trial_cost;
                damping = (damping / 10.0).max(1e-12);
                accepted = true;
                if gain <= 1e-13 * previous || moved {
                    return LmOutcome {
                        params: p,
                        chi2: cost,
                        iterations: iteration,
                        converged: true,
                    };
                }
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            // no downhill step at any damping: a stationary point within round-off
            return LmOutcome {
                params: p,
                chi2: cost,
                iterations: iteration,
                converged: true,
            };
        }
    }
    LmOutcome {
        params: p,
        chi2: cost,
        iterations: MAX_ITERATIONS,
        converged: false,
    }
}

fn summarize<M: CurveModel>(model: &M, data: &[Weighted], outcome: LmOutcome) -> FitResult {
    let dof = data.len().saturating_sub(2).max(1);
    let (a, _) = normal_equations(model, data, &outcome.params);
    let scale = a.diagonal().max();
    let identified: Vec<usize> = (0..2)
        .filter(|&i| a[(i, i)] > 1e-14 * scale && a[(i, i)] > 0.0)
        .collect();
    let mut variance = [f64::INFINITY; 2];
    let sub = DMatrix::from_fn(identified.len(), identified.len(), |r, c| {
        a[(identified[r], identified[c])]
    });
    if let Some(inv) = sub.try_inverse() {
        let s2 = outcome.chi2 / dof as f64;
        for (r, &i) in identified.iter().enumerate() {
            variance[i] = (s2 * inv[(r, r)]).max(0.0);
        }
    }
    let t = StudentsT::new(0.0, 1.0, dof as f64)
        .expect("dof >= 1")
        .inverse_cdf(0.975);
    let params = (0..2)
        .map(|i| {
            let value = outcome.params[i];
            let (lo, hi) = model.feasible(i);
            let (ci_low, ci_high) = if variance[i].is_finite() {
                let half = t * variance[i].sqrt();
                if model.clip_interval(i) {
                    ((value - half).max(lo), (value + half).min(hi))
                } else {
                    (value - half, value + half)
                }
            } else {
                (lo, hi)
            };
            FitParam {
                name: M::NAMES[i].to_string(),
                value,
                ci_low,
                ci_high,
            }
        })
        .collect();
    FitResult {
        params,
        residual_norm: outcome.chi2.sqrt(),
        dof,
        iterations: outcome.iterations,
        converged: outcome.converged,
    }
}

fn prepare(points: &[BinomialPoint], what: &str) -> Result<Vec<Weighted>> {
    for p in points {
        if !(0.0..=1.0).contains(&p.probability) {
            return Err(Error::FitInput(format!(
                "{what}: probability {} outside [0, 1]",
                p.probability
            )));
        }
        if p.trials == 0 {
            return Err(Error::FitInput(format!(
                "{what}: point at x = {} has no trials",
                p.x
            )));
        }
        if !p.x.is_finite() {
            return Err(Error::FitInput(format!("{what}: non-finite abscissa")));
        }
    }
    // canonical order makes the fit independent of input order
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| {
        a.x.total_cmp(&b.x)
            .then(a.probability.total_cmp(&b.probability))
            .then(a.trials.cmp(&b.trials))
    });
    Ok(sorted
        .iter()
        .map(|p| Weighted {
            x: p.x,
            y: p.probability,
            w: p.weight(),
        })
        .collect())
}

fn distinct(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Fit `plateau · (1 - exp(-rate · t))` to flip probabilities versus duration.
pub fn fit_flip_curve(points: &[BinomialPoint]) -> Result<FitResult> {
    let data = prepare(points, "flip curve")?;
    let durations = distinct(data.iter().map(|d| d.x));
    if durations.len() < 3 {
        return Err(Error::FitInput(format!(
            "flip curve needs at least 3 distinct durations, got {}",
            durations.len()
        )));
    }
    if durations[0] < 0.0 {
        return Err(Error::FitInput("flip curve: negative duration".into()));
    }
    let t_max = *durations.last().expect("non-empty");
    let t_min = durations
        .iter()
        .copied()
        .find(|&t| t > 0.0)
        .unwrap_or(t_max);
    if t_max <= 0.0 {
        return Err(Error::FitInput("flip curve: all durations are zero".into()));
    }

    let model = FlipCurveModel;
    // log-spaced rate grid, 8 per decade; the plateau is linear given the rate
    let (lo, hi) = ((1e-3 / t_max).log10(), (1e2 / t_min).log10());
    let steps = ((hi - lo) * 8.0).ceil() as usize;
    let mut best = ([0.0, 0.0], f64::INFINITY);
    for k in 0..=steps {
        let rate = 10f64.powf(lo + (hi - lo) * k as f64 / steps as f64);
        let (num, den) = data.iter().fold((0.0, 0.0), |(n, d), p| {
            let g = flip_probability(rate, p.x);
            (n + p.w * p.y * g, d + p.w * g * g)
        });
        let plateau = if den > 0.0 {
            (num / den).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let cost = chi2(&model, &data, &[rate, plateau]);
        if cost < best.1 {
            best = ([rate, plateau], cost);
        }
    }
    let mut outcome = levenberg_marquardt(&model, &data, best.0);
    let amplitude = model.value(t_max, &outcome.params);
    if amplitude <= 1e-12 {
        // no detectable flips: the zero curve, rate unidentified
        outcome.params = [0.0, 0.0];
        outcome.chi2 = chi2(&model, &data, &outcome.params);
    }
    Ok(summarize(&model, &data, outcome))
}

/// Fit `(1 + contrast · cos(φ + offset)) / 2` to a phase scan.
pub fn fit_ramsey_fringe(points: &[BinomialPoint]) -> Result<FitResult> {
    let data = prepare(points, "ramsey fringe")?;
    let phases = distinct(data.iter().map(|d| d.x));
    if phases.len() < 3 {
        return Err(Error::FitInput(
            "ramsey fringe needs at least 3 distinct phases".into(),
        ));
    }
    // n evenly spaced samples per period span (n-1)/n of it
    let n = phases.len() as f64;
    let span = phases[phases.len() - 1] - phases[0];
    if span < 2.0 * PI * (n - 1.0) / n - 1e-9 {
        return Err(Error::FitInput(format!(
            "phases span {span:.4} rad, less than one period"
        )));
    }

    let model = RamseyModel;
    let mut best = ([0.0, 0.0], f64::INFINITY);
    for contrast in [0.25, 0.5, 0.75, 1.0] {
        for k in 0..12 {
            let offset = -PI + 2.0 * PI * k as f64 / 12.0;
            let cost = chi2(&model, &data, &[contrast, offset]);
            if cost < best.1 {
                best = ([contrast, offset], cost);
            }
        }
    }
    let zero = chi2(&model, &data, &[0.0, 0.0]);
    if zero < best.1 {
        best = ([0.0, 0.0], zero);
    }
    let outcome = levenberg_marquardt(&model, &data, best.0);
    Ok(summarize(&model, &data, outcome))
}
