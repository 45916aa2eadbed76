//! Event-driven Monte Carlo of the bright/dark leakage chain with
//! time-tagged photon emission.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, Error, Result};
use crate::physics::{self, RateConstants, Scheme};
use crate::rng::substream;

/// Qubit manifold as seen by the detection light.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitState {
    Dark,
    Bright,
}

impl QubitState {
    pub fn flipped(self) -> Self {
        match self {
            QubitState::Dark => QubitState::Bright,
            QubitState::Bright => QubitState::Dark,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QubitState::Dark => "dark",
            QubitState::Bright => "bright",
        }
    }
}

/// Effective two-state detection model.
///
/// `lambda_bright` is the total collected rate while bright (signal plus
/// background); dark dwells register only `lambda_background`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionModel {
    pub lambda_bright: f64,
    pub lambda_background: f64,
    pub r_b2d: f64,
    pub r_d2b: f64,
    pub duration: f64,
}

impl DetectionModel {
    pub fn new(
        lambda_bright: f64,
        lambda_background: f64,
        r_b2d: f64,
        r_d2b: f64,
        duration: f64,
    ) -> Result<Self> {
        let model = Self {
            lambda_bright,
            lambda_background,
            r_b2d,
            r_d2b,
            duration,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative("lambda_bright", self.lambda_bright)?;
        check_non_negative("lambda_background", self.lambda_background)?;
        check_non_negative("r_b2d", self.r_b2d)?;
        check_non_negative("r_d2b", self.r_d2b)?;
        check_positive("duration", self.duration)?;
        if self.lambda_bright <= self.lambda_background {
            return Err(Error::invalid(
                "lambda_bright",
                format!(
                    "bright rate {} must exceed background rate {}",
                    self.lambda_bright, self.lambda_background
                ),
            ));
        }
        Ok(())
    }

    /// Reference operating point of a scheme: 0.180 photons/µs over 70 µs.
    pub fn reference(scheme: Scheme) -> Self {
        let rates = RateConstants::measured(scheme);
        Self {
            lambda_bright: physics::COLLECTED_RATE,
            lambda_background: physics::BACKGROUND_RATE,
            r_b2d: rates.r_bright_to_dark,
            r_d2b: rates.r_dark_to_bright,
            duration: physics::DETECTION_DURATION_US,
        }
    }

    pub fn with_duration(self, duration: f64) -> Self {
        Self { duration, ..self }
    }

    pub fn emission_rate(&self, state: QubitState) -> f64 {
        match state {
            QubitState::Bright => self.lambda_bright,
            QubitState::Dark => self.lambda_background,
        }
    }

    pub fn leak_rate(&self, state: QubitState) -> f64 {
        match state {
            QubitState::Bright => self.r_b2d,
            QubitState::Dark => self.r_d2b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flip {
    pub time: f64,
    pub state: QubitState,
}

/// One simulated detection shot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: QubitState,
    pub flips: Vec<Flip>,
    pub photons: Vec<f64>,
    pub final_state: QubitState,
}

impl Trajectory {
    pub fn photon_count(&self) -> usize {
        self.photons.len()
    }

    pub fn flipped(&self) -> bool {
        !self.flips.is_empty()
    }
}

/// Wait until the next event of a rate-`rate` Poisson process; infinite for rate 0.
fn waiting_time<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate > 0.0 {
        // rate is finite and positive, so construction cannot fail
        Exp::new(rate).expect("positive rate").sample(rng)
    } else {
        f64::INFINITY
    }
}

/// Simulate one shot: sample each dwell, then fill it with photons.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &DetectionModel,
    initial: QubitState,
    rng: &mut R,
) -> Trajectory {
    let end = model.duration;
    let mut state = initial;
    let mut t = 0.0;
    let mut flips = Vec::new();
    let mut photons = Vec::new();

    while t < end {
        let dwell_end = (t + waiting_time(model.leak_rate(state), rng)).min(end);
        let rate = model.emission_rate(state);
        let mut arrival = t + waiting_time(rate, rng);
        while arrival < dwell_end {
            photons.push(arrival);
            arrival += waiting_time(rate, rng);
        }
        if dwell_end < end {
            state = state.flipped();
            flips.push(Flip {
                time: dwell_end,
                state,
            });
        }
        t = dwell_end;
    }

    Trajectory {
        initial,
        flips,
        photons,
        final_state: state,
    }
}

/// Empirical photon-number histogram.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountHistogram {
    pub shots: u64,
    pub bins: BTreeMap<usize, u64>,
}

impl CountHistogram {
    pub fn record(&mut self, count: usize) {
        self.shots += 1;
        *self.bins.entry(count).or_insert(0) += 1;
    }

    pub fn merge(mut self, other: CountHistogram) -> CountHistogram {
        self.shots += other.shots;
        for (n, c) in other.bins {
            *self.bins.entry(n).or_insert(0) += c;
        }
        self
    }

    pub fn get(&self, n: usize) -> u64 {
        self.bins.get(&n).copied().unwrap_or(0)
    }

    pub fn frequency(&self, n: usize) -> f64 {
        self.get(n) as f64 / self.shots as f64
    }

    pub fn max_count(&self) -> usize {
        self.bins.keys().next_back().copied().unwrap_or(0)
    }

    /// Shots with more than `threshold` photons.
    pub fn above(&self, threshold: usize) -> u64 {
        self.bins.range(threshold + 1..).map(|(_, c)| c).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub initial: QubitState,
    pub histogram: CountHistogram,
    pub flipped_shots: u64,
}

impl BatchResult {
    pub fn flip_fraction(&self) -> f64 {
        self.flipped_shots as f64 / self.histogram.shots as f64
    }
}

/// Fold every shot of a batch into per-worker accumulators and merge them.
///
/// Shot `i` always draws from `substream(master_seed, i)`; `merge` must be
/// associative and commutative for the result to be scheduling-independent.
pub fn fold_shots<T, Z, F, M>(
    model: &DetectionModel,
    initial: QubitState,
    shots: u64,
    master_seed: u64,
    identity: Z,
    fold: F,
    merge: M,
) -> Result<T>
where
    T: Send,
    Z: Fn() -> T + Sync + Send,
    F: Fn(T, u64, Trajectory) -> T + Sync + Send,
    M: Fn(T, T) -> T + Sync + Send,
{
    if shots == 0 {
        return Err(Error::NoShots);
    }
    model.validate()?;
    Ok((0..shots)
        .into_par_iter()
        .fold(&identity, |acc, i| {
            let mut rng = substream(master_seed, i);
            fold(acc, i, simulate_trajectory(model, initial, &mut rng))
        })
        .reduce(&identity, &merge))
}

/// Histogram and flip tally of `shots` independent shots.
pub fn simulate_batch(
    model: &DetectionModel,
    initial: QubitState,
    shots: u64,
    master_seed: u64,
) -> Result<BatchResult> {
    let (histogram, flipped_shots) = fold_shots(
        model,
        initial,
        shots,
        master_seed,
        || (CountHistogram::default(), 0u64),
        |(mut h, f), _, traj| {
            h.record(traj.photon_count());
            (h, f + u64::from(traj.flipped()))
        },
        |(ha, fa), (hb, fb)| (ha.merge(hb), fa + fb),
    )?;
    Ok(BatchResult {
        initial,
        histogram,
        flipped_shots,
    })
}

/// Serial reference implementation of [`simulate_batch`].
pub fn simulate_batch_serial(
    model: &DetectionModel,
    initial: QubitState,
    shots: u64,
    master_seed: u64,
) -> Result<BatchResult> {
    if shots == 0 {
        return Err(Error::NoShots);
    }
    model.validate()?;
    let mut histogram = CountHistogram::default();
    let mut flipped_shots = 0;
    for i in 0..shots {
        let traj = simulate_trajectory(model, initial, &mut substream(master_seed, i));
        histogram.record(traj.photon_count());
        flipped_shots += u64::from(traj.flipped());
    }
    Ok(BatchResult {
        initial,
        histogram,
        flipped_shots,
    })
}
