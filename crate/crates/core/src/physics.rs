//! Closed-form leakage, efficiency and coherence-budget arithmetic.
//!
//! All rates are per microsecond, durations in microseconds and laser powers
//! in microwatts.

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, check_probability, Error, Result};

/// Lifetime of the metastable shelving manifold, µs.
pub const D32_LIFETIME_US: f64 = 55_000.0;
/// Saturated scattering rate of the cycling transition, photons/µs.
pub const SATURATED_SCATTER_RATE: f64 = 23.6;
/// Measured collection efficiency of the reference setup.
pub const COLLECTION_EFFICIENCY: f64 = 0.00763;
/// Collected bright-state photon rate at the reference operating point, photons/µs.
pub const COLLECTED_RATE: f64 = 0.180;
/// Detector background, 6.3 counts/s expressed per µs.
pub const BACKGROUND_RATE: f64 = 6.3e-6;
/// Reference detection window, µs.
pub const DETECTION_DURATION_US: f64 = 70.0;
/// Branching ratio of the excited P(F=1) level into the D manifold.
pub const D_BRANCHING_RATIO: f64 = 0.005;
/// Operating power of the repump laser, µW.
pub const REPUMP_POWER_UW: f64 = 4.7;
/// Best collection efficiency reported for comparable imaging systems.
pub const STATE_OF_THE_ART_EFFICIENCY: f64 = 0.0435;

/// Readout scheme: direct hyperfine fluorescence or D-state shelving.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Hyperfine,
    Shelving,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Hyperfine => "hyperfine",
            Scheme::Shelving => "shelving",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "hyperfine" => Ok(Scheme::Hyperfine),
            "shelving" => Ok(Scheme::Shelving),
            other => Err(format!(
                "unknown scheme `{other}` (expected hyperfine or shelving)"
            )),
        }
    }
}

/// Decay probabilities out of the off-resonantly excited P(F=1) level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchingParams {
    /// Probability of an off-resonant excitation event.
    pub p_off: f64,
    /// Probability of decaying P -> S(F=0).
    pub p_ps: f64,
    /// Probability of decaying P -> D(F=2).
    pub p_pd: f64,
}

impl BranchingParams {
    pub fn new(p_off: f64, p_ps: f64, p_pd: f64) -> Result<Self> {
        check_probability("p_off", p_off)?;
        check_probability("p_ps", p_ps)?;
        check_probability("p_pd", p_pd)?;
        if p_ps >= 1.0 {
            return Err(Error::Divergent(p_ps));
        }
        if p_ps + p_pd > 1.0 + 1e-15 {
            return Err(Error::invalid(
                "p_pd",
                format!("p_ps + p_pd = {} exceeds 1", p_ps + p_pd),
            ));
        }
        Ok(Self { p_off, p_ps, p_pd })
    }

    /// Branching out of P(F=1) for a given P -> D branching ratio.
    ///
    /// The S(F=0) share is 1/3 of the non-D decays and the D(F=2) share is
    /// 5/6 of the D decays (angular-momentum weights taken as given).
    pub fn from_d_branching(p_off: f64, d_ratio: f64) -> Result<Self> {
        check_probability("d_branching", d_ratio)?;
        Self::new(p_off, (1.0 - d_ratio) / 3.0, d_ratio * 5.0 / 6.0)
    }

    /// Reference branching with a 0.5 % D-branching ratio.
    pub fn reference(p_off: f64) -> Result<Self> {
        Self::from_d_branching(p_off, D_BRANCHING_RATIO)
    }
}

/// Overall probability that one off-resonant excitation ends in the shelf.
///
/// Sums the repeated P -> S -> P re-excitation loop in closed form.
pub fn shelving_leak_probability(b: &BranchingParams) -> Result<f64> {
    if b.p_ps >= 1.0 {
        return Err(Error::Divergent(b.p_ps));
    }
    Ok(b.p_off * b.p_pd / (1.0 - b.p_ps))
}

/// Ratio of hyperfine to shelving leakage probability.
pub fn suppression_factor(b: &BranchingParams) -> Result<f64> {
    if b.p_ps >= 1.0 {
        return Err(Error::Divergent(b.p_ps));
    }
    if b.p_pd <= 0.0 {
        return Err(Error::NoDecayChannel);
    }
    Ok((1.0 - b.p_ps) / (3.0 * b.p_pd))
}

/// Ordered, named multiplicative contributions to photon collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyBudget {
    factors: Vec<(String, f64)>,
}

impl EfficiencyBudget {
    pub fn new(factors: Vec<(String, f64)>) -> Result<Self> {
        for (i, (name, value)) in factors.iter().enumerate() {
            if name.trim().is_empty() {
                return Err(Error::invalid(
                    "budget",
                    format!("factor {i} has an empty name"),
                ));
            }
            if factors[..i].iter().any(|(other, _)| other == name) {
                return Err(Error::invalid(
                    "budget",
                    format!("duplicate factor `{name}`"),
                ));
            }
            if !(0.0..=1.0).contains(value) {
                return Err(Error::invalid(
                    "budget",
                    format!("factor `{name}` = {value} is not in [0, 1]"),
                ));
            }
        }
        Ok(Self { factors })
    }

    /// Imaging-chain contributions of the reference setup.
    pub fn reference() -> Self {
        Self {
            factors: vec![
                ("solid angle of objective lens".into(), 0.04),
                ("transmission of objective lens".into(), 0.85),
                ("transmission of optical filter".into(), 0.95),
                ("fiber coupling efficiency".into(), 0.75),
                ("quantum efficiency of PMT".into(), 0.32),
            ],
        }
    }

    pub fn factors(&self) -> &[(String, f64)] {
        &self.factors
    }

    pub fn total(&self) -> f64 {
        efficiency_budget_total(self)
    }
}

pub fn efficiency_budget_total(budget: &EfficiencyBudget) -> f64 {
    budget.factors.iter().map(|(_, v)| v).product()
}

/// Collected photon rate for a given scattering rate and collection efficiency.
pub fn collected_photon_rate(scatter_rate: f64, efficiency: f64) -> Result<f64> {
    check_non_negative("scatter_rate", scatter_rate)?;
    check_probability("efficiency", efficiency)?;
    Ok(scatter_rate * efficiency)
}

/// Leakage and scattering constants of one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub r_bright_to_dark: f64,
    pub r_dark_to_bright: f64,
    pub d32_lifetime: f64,
    pub saturated_scatter_rate: f64,
}

impl RateConstants {
    pub fn new(
        r_bright_to_dark: f64,
        r_dark_to_bright: f64,
        d32_lifetime: f64,
        saturated_scatter_rate: f64,
    ) -> Result<Self> {
        check_non_negative("r_bright_to_dark", r_bright_to_dark)?;
        check_non_negative("r_dark_to_bright", r_dark_to_bright)?;
        check_positive("d32_lifetime", d32_lifetime)?;
        check_non_negative("saturated_scatter_rate", saturated_scatter_rate)?;
        Ok(Self {
            r_bright_to_dark,
            r_dark_to_bright,
            d32_lifetime,
            saturated_scatter_rate,
        })
    }

    /// Fitted leakage rates of the given scheme.
    pub fn measured(scheme: Scheme) -> Self {
        let (r_bright_to_dark, r_dark_to_bright) = match scheme {
            Scheme::Hyperfine => (17.4e-4, 1.1e-4),
            Scheme::Shelving => (2.6e-5, 1.9e-5),
        };
        Self {
            r_bright_to_dark,
            r_dark_to_bright,
            d32_lifetime: D32_LIFETIME_US,
            saturated_scatter_rate: SATURATED_SCATTER_RATE,
        }
    }
}

/// Probability of at least one flip of a memoryless leak over `t`.
pub fn flip_probability(rate: f64, t: f64) -> f64 {
    -(-rate * t).exp_m1()
}

/// Saturating flip curve `plateau * (1 - exp(-rate t))`.
pub fn flip_curve(plateau: f64, rate: f64, t: f64) -> f64 {
    plateau * flip_probability(rate, t)
}

/// Dark-to-bright rate floor set by spontaneous decay of the shelf.
pub fn lifetime_floor(d32_lifetime: f64) -> Result<f64> {
    check_positive("d32_lifetime", d32_lifetime)?;
    Ok(1.0 / d32_lifetime)
}

/// Dark-to-bright leak rate under repump light of the given power.
pub fn repump_leak_rate(floor: f64, slope: f64, power: f64) -> f64 {
    floor + slope * power
}

/// Slope placing `flip_probability(repump_leak_rate(floor, slope, power), duration)`
/// at `target_flip`.
pub fn calibrate_repump_slope(
    floor: f64,
    power: f64,
    duration: f64,
    target_flip: f64,
) -> Result<f64> {
    check_positive("power", power)?;
    check_positive("duration", duration)?;
    if !(0.0..1.0).contains(&target_flip) {
        return Err(Error::invalid(
            "target_flip",
            format!("{target_flip} is not in [0, 1)"),
        ));
    }
    let rate = -(-target_flip).ln_1p() / duration;
    if rate < floor {
        return Err(Error::invalid(
            "target_flip",
            format!("implied rate {rate:e}/us lies below the lifetime floor {floor:e}/us"),
        ));
    }
    Ok((rate - floor) / power)
}

/// Residual unshelved population after two independent transfer pulses.
pub fn two_step_transfer_error(e1: f64, e2: f64) -> Result<f64> {
    check_probability("e1", e1)?;
    check_probability("e2", e2)?;
    Ok(e1 * e2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> BranchingParams {
        BranchingParams::reference(1e-4).unwrap()
    }

    fn series_oracle(b: &BranchingParams, terms: usize) -> f64 {
        (0..terms)
            .map(|k| b.p_off * b.p_ps.powi(k as i32) * b.p_pd)
            .sum()
    }

    #[test]
    fn leak_probability_edge_cases() {
        let none = BranchingParams::new(0.0, 0.3, 0.2).unwrap();
        assert_eq!(shelving_leak_probability(&none).unwrap(), 0.0);
        let single = BranchingParams::new(0.2, 0.0, 0.4).unwrap();
        assert!((shelving_leak_probability(&single).unwrap() - 0.08).abs() < 1e-16);
    }

    #[test]
    fn leak_probability_matches_series() {
        let b = reference();
        let closed = shelving_leak_probability(&b).unwrap();
        let series = series_oracle(&b, 50);
        assert!(((closed - series) / series).abs() < 1e-12);
        // frozen from a 30-digit evaluation of the same series
        assert!((closed - 6.234_413_965_087_28e-7).abs() < 1e-19);
    }

    #[test]
    fn divergent_series_rejected() {
        assert!(matches!(
            BranchingParams::new(0.1, 1.0, 0.0),
            Err(Error::Divergent(_))
        ));
        let b = BranchingParams {
            p_off: 0.1,
            p_ps: 1.0,
            p_pd: 0.0,
        };
        assert!(matches!(
            shelving_leak_probability(&b),
            Err(Error::Divergent(_))
        ));
    }

    #[test]
    fn suppression_factor_reference() {
        let r = suppression_factor(&reference()).unwrap();
        assert!((r - 53.466_666_666_666_67).abs() < 1e-9);
        assert_eq!(r.round(), 53.0);
        let unit = BranchingParams::new(0.1, 0.0, 1.0 / 3.0).unwrap();
        assert!((suppression_factor(&unit).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn suppression_factor_needs_d_channel() {
        let b = BranchingParams::new(0.1, 0.3, 0.0).unwrap();
        assert!(matches!(suppression_factor(&b), Err(Error::NoDecayChannel)));
    }

    #[test]
    fn budget_totals() {
        assert!((EfficiencyBudget::reference().total() - 0.007752).abs() < 1e-15);
        assert_eq!(EfficiencyBudget::new(vec![]).unwrap().total(), 1.0);
        let one = EfficiencyBudget::new(vec![("x".into(), 0.5)]).unwrap();
        assert_eq!(one.total(), 0.5);
    }

    #[test]
    fn budget_validation() {
        assert!(EfficiencyBudget::new(vec![("a".into(), 1.2)]).is_err());
        assert!(EfficiencyBudget::new(vec![(" ".into(), 0.2)]).is_err());
        assert!(EfficiencyBudget::new(vec![("a".into(), 0.2), ("a".into(), 0.3)]).is_err());
    }

    #[test]
    fn collected_rates() {
        assert!((collected_photon_rate(23.6, 0.00763).unwrap() - 0.180068).abs() < 1e-12);
        assert_eq!(collected_photon_rate(23.6, 0.0).unwrap(), 0.0);
        assert!((collected_photon_rate(23.6, 0.0435).unwrap() - 1.0266).abs() < 1e-12);
        assert!(collected_photon_rate(23.6, 1.5).is_err());
        assert!(collected_photon_rate(23.6, -0.1).is_err());
    }

    #[test]
    fn flip_probability_values() {
        assert_eq!(flip_probability(1.0, 0.0), 0.0);
        assert_eq!(flip_probability(f64::INFINITY, 1.0), 1.0);
        // 30-digit reference: 1 - exp(-0.1218)
        assert!((flip_probability(17.4e-4, 70.0) - 0.114_674_584_119_524_75).abs() < 1e-15);
    }

    #[test]
    fn lifetime_floor_values() {
        let floor = lifetime_floor(D32_LIFETIME_US).unwrap();
        assert!((floor - 1.818_181_818_181_818e-5).abs() < 1e-18);
        assert_eq!(lifetime_floor(1.0).unwrap(), 1.0);
        assert!(RateConstants::measured(Scheme::Shelving).r_dark_to_bright >= floor);
        assert!(lifetime_floor(0.0).is_err());
        assert!(lifetime_floor(-3.0).is_err());
    }

    #[test]
    fn repump_calibration_hits_anchor() {
        let floor = lifetime_floor(D32_LIFETIME_US).unwrap();
        let target = flip_probability(1.9e-5, 1000.0);
        let slope = calibrate_repump_slope(floor, REPUMP_POWER_UW, 1000.0, target).unwrap();
        let rate = repump_leak_rate(floor, slope, REPUMP_POWER_UW);
        assert!((flip_probability(rate, 1000.0) - target).abs() < 1e-14);
        assert!(rate >= floor);
        assert_eq!(repump_leak_rate(floor, slope, 0.0), floor);
        assert_eq!(repump_leak_rate(floor, 0.0, 100.0), floor);
        assert!(calibrate_repump_slope(floor, 4.7, 1000.0, 1e-6).is_err());
    }

    #[test]
    fn two_step_transfer() {
        assert!((two_step_transfer_error(1e-2, 1e-2).unwrap() - 1e-4).abs() < 1e-18);
        assert_eq!(two_step_transfer_error(0.0, 0.3).unwrap(), 0.0);
        assert!(two_step_transfer_error(1.1, 0.3).is_err());
    }

    /// Population left behind by two pulses, enumerated over every
    /// success/failure path of the absorbing two-stage chain.
    fn transfer_chain_residual(e1: f64, e2: f64) -> f64 {
        let mut residual = 0.0;
        for first_ok in [true, false] {
            for second_ok in [true, false] {
                let p =
                    if first_ok { 1.0 - e1 } else { e1 } * if second_ok { 1.0 - e2 } else { e2 };
                // once shelved the population is absorbed; only a double failure stays behind
                if !first_ok && !second_ok {
                    residual += p;
                }
            }
        }
        residual
    }

    proptest! {
        #[test]
        fn suppression_times_leak_is_hyperfine_leak(
            p_off in 0.0f64..1.0, p_ps in 0.0f64..0.99, frac in 0.001f64..1.0
        ) {
            let p_pd = (1.0 - p_ps) * frac;
            let b = BranchingParams::new(p_off, p_ps, p_pd).unwrap();
            let lhs = suppression_factor(&b).unwrap() * shelving_leak_probability(&b).unwrap();
            prop_assert!((lhs - p_off / 3.0).abs() <= 1e-14 * (1.0 + p_off));
        }

        #[test]
        fn leak_matches_partial_series(p_off in 0.0f64..1.0, p_ps in 0.0f64..0.57, frac in 0.0f64..1.0) {
            // 50 terms leave a relative remainder p_ps^50, below 1e-12 only for p_ps < ~0.575
            let b = BranchingParams::new(p_off, p_ps, (1.0 - p_ps) * frac).unwrap();
            let closed = shelving_leak_probability(&b).unwrap();
            let series = series_oracle(&b, 50);
            prop_assert!((closed - series).abs() <= 1e-12 * closed.max(1e-300));
        }

        #[test]
        fn partial_series_remainder_is_geometric(p_off in 0.0f64..1.0, p_ps in 0.0f64..0.99, frac in 0.0f64..1.0) {
            let b = BranchingParams::new(p_off, p_ps, (1.0 - p_ps) * frac).unwrap();
            let closed = shelving_leak_probability(&b).unwrap();
            let series = series_oracle(&b, 50);
            prop_assert!((closed * (1.0 - p_ps.powi(50)) - series).abs() <= 1e-13 * closed.max(1e-300));
        }

        #[test]
        fn budget_permutation_invariant(values in proptest::collection::vec(0.0f64..=1.0, 1..7), rot in 0usize..7) {
            let named: Vec<(String, f64)> =
                values.iter().enumerate().map(|(i, v)| (format!("f{i}"), *v)).collect();
            let mut rotated = named.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            rotated.reverse();
            let a = EfficiencyBudget::new(named).unwrap().total();
            let b = EfficiencyBudget::new(rotated).unwrap().total();
            prop_assert!((a - b).abs() <= 1e-15);
            let min = values.iter().cloned().fold(1.0, f64::min);
            prop_assert!(a <= min);
        }

        #[test]
        fn flip_probability_memoryless(rate in 0.0f64..1.0, t1 in 0.0f64..100.0, t2 in 0.0f64..100.0) {
            let joint = flip_probability(rate, t1 + t2);
            let split = 1.0 - (1.0 - flip_probability(rate, t1)) * (1.0 - flip_probability(rate, t2));
            prop_assert!((joint - split).abs() < 1e-12);
        }

        #[test]
        fn repump_rate_above_floor(f in 0.0f64..1.0, k in 0.0f64..1.0, p in 0.0f64..100.0) {
            prop_assert!(repump_leak_rate(f, k, p) >= f);
        }

        #[test]
        fn product_matches_transfer_chain(e1 in 0.0f64..=1.0, e2 in 0.0f64..=1.0) {
            let direct = two_step_transfer_error(e1, e2).unwrap();
            prop_assert!((direct - transfer_chain_residual(e1, e2)).abs() < 1e-15);
        }
    }
}
