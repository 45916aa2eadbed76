use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use readout_bench::model_at_efficiency;
use readout_core::counts::count_pmf;
use readout_core::discriminate::shot_log_likelihood;
use readout_core::physics::{Scheme, COLLECTION_EFFICIENCY, STATE_OF_THE_ART_EFFICIENCY};
use readout_core::rng::substream;
use readout_core::trajectory::{simulate_batch, simulate_trajectory};
use readout_core::{DetectionModel, QubitState};

fn batch(c: &mut Criterion) {
    let mut group = c.benchmark_group("simulate_batch");
    let shots = 100_000;
    group.throughput(Throughput::Elements(shots));
    for state in [QubitState::Dark, QubitState::Bright] {
        let model = DetectionModel::reference(Scheme::Shelving);
        group.bench_with_input(
            BenchmarkId::new("shelving", state.name()),
            &state,
            |b, &state| b.iter(|| simulate_batch(&model, state, shots, 7).unwrap()),
        );
    }
    group.finish();
}

fn pmf(c: &mut Criterion) {
    let mut group = c.benchmark_group("count_pmf");
    for (label, efficiency) in [
        ("0.763%", COLLECTION_EFFICIENCY),
        ("4.35%", STATE_OF_THE_ART_EFFICIENCY),
    ] {
        let model = model_at_efficiency(Scheme::Hyperfine, efficiency);
        group.bench_function(BenchmarkId::new("hyperfine_bright", label), |b| {
            b.iter(|| count_pmf(black_box(&model), QubitState::Bright).unwrap())
        });
    }
    group.finish();
}

fn likelihood(c: &mut Criterion) {
    let model = DetectionModel::reference(Scheme::Hyperfine);
    let mut rng = substream(11, 0);
    let photons = simulate_trajectory(&model, QubitState::Bright, &mut rng).photons;
    c.bench_function("shot_log_likelihood/hyperfine_bright", |b| {
        b.iter(|| shot_log_likelihood(black_box(&photons), &model, QubitState::Dark).unwrap())
    });
}

criterion_group!(benches, batch, pmf, likelihood);
criterion_main!(benches);
