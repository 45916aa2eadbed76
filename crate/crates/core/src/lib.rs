//! Fluorescence readout of a trapped-ion hyperfine qubit with metastable
//! D-state shelving.
//!
//! The crate models detection as a two-state leakage chain that emits
//! time-tagged photons, and provides:
//!
//! - [`physics`]: closed-form leakage, branching and collection-efficiency arithmetic;
//! - [`trajectory`]: seeded event-driven Monte Carlo of detection shots;
//! - [`counts`]: analytic photon-count distributions, threshold errors and sweeps;
//! - [`discriminate`]: threshold and arrival-time likelihood classifiers with Wilson intervals;
//! - [`inference`]: least-squares fits of flip curves and Ramsey fringes;
//! - [`midcircuit`]: coherence of shelved qubits through a mid-circuit detection window;
//! - [`experiment`]: config-driven runs that emit CSV tables and a JSON summary.

pub mod counts;
pub mod discriminate;
pub mod error;
pub mod experiment;
pub mod inference;
pub mod midcircuit;
pub mod physics;
pub mod quadrature;
pub mod rng;
pub mod trajectory;

pub use counts::{count_pmf, detection_errors, optimal_threshold, CountPmf, ErrorReport};
pub use discriminate::{DiscriminationReport, Discriminator};
pub use error::{Error, Result};
pub use inference::{BinomialPoint, FitParam, FitResult};
pub use midcircuit::{Envelope, MidcircuitConfig, Sequence};
pub use physics::{BranchingParams, EfficiencyBudget, RateConstants, Scheme};
pub use trajectory::{CountHistogram, DetectionModel, QubitState, Trajectory};
