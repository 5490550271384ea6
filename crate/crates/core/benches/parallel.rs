use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use erank_core::attention::{capacity, softmax_rows, ModelParams, ModelSpec};
use erank_core::bounds::verify_all;
use erank_core::experiments::{sweep, SweepConfig};
use erank_core::rademacher::{coupled_complexity_mc, McConfig, SensitivitySet};
use erank_core::rng;
use erank_core::{Execution, Matrix};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_capacity(c: &mut Criterion) {
    let spec = ModelSpec {
        num_layers: 2,
        num_heads: 2,
        seq_len: 16,
        ..ModelSpec::default()
    };
    let mut g = rng::seeded(1);
    let params = ModelParams::init(&spec, &mut g);
    let inputs: Vec<Matrix> = (0..256).map(|_| Matrix::random_normal(16, spec.d_model, 1.0, &mut g)).collect();
    let mut group = c.benchmark_group("capacity");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| capacity(&params, &spec, black_box(&inputs), "bench", exec).unwrap())
        });
    }
    group.finish();
}

fn bench_verify(c: &mut Criterion) {
    let mut g = rng::seeded(2);
    let mats: Vec<Matrix> = (0..1000)
        .map(|_| softmax_rows(&Matrix::random_normal(16, 16, 2.0, &mut g), 1.0).unwrap())
        .collect();
    let mut group = c.benchmark_group("verify_all");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| verify_all(black_box(&mats), exec))
        });
    }
    group.finish();
}

fn bench_coupled(c: &mut Criterion) {
    let mut g = rng::seeded(3);
    let set = SensitivitySet::new((0..64).map(|_| Matrix::random_normal(8, 8, 1.0, &mut g)).collect()).unwrap();
    let cfg = McConfig {
        trials: 200,
        ..McConfig::default()
    };
    let mut group = c.benchmark_group("coupled_mc");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| coupled_complexity_mc(black_box(&set), 2.0, &cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let mut cfg = SweepConfig::default();
    cfg.task.train_sizes = vec![32, 64, 128];
    cfg.task.test_size = 1280;
    cfg.train.epochs = Some(5);
    cfg.replicates = 8;
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| sweep(black_box(&cfg), exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_capacity, bench_verify, bench_coupled, bench_sweep);
criterion_main!(benches);
