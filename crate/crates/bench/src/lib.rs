//! Shared fixtures for the criterion benchmarks.

use readout_core::{DetectionModel, Scheme};

/// Reference detection model of `scheme` at a given collection efficiency.
pub fn model_at_efficiency(scheme: Scheme, efficiency: f64) -> DetectionModel {
    let mut model = DetectionModel::reference(scheme);
    model.lambda_bright =
        readout_core::physics::SATURATED_SCATTER_RATE * efficiency + model.lambda_background;
    model
}
