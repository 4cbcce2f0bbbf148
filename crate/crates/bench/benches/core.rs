use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use hiermc_bench::{instance, params};
use hiermc_core::estimators::{exact_ml, practical_estimate, ExactConfig, PracticalConfig};
use hiermc_core::model::{generate_instance, DeltaPair, GroundTruthMode};
use hiermc_core::threshold::regime_grid;
use hiermc_core::{neg_log_likelihood, p_star, ModelParams};

fn threshold(c: &mut Criterion) {
    let p = params(3000, 0.1);
    let delta = DeltaPair {
        tau1: Some(0.4),
        tau2: Some(0.3),
    };
    c.bench_function("p_star", |b| {
        b.iter(|| p_star(black_box(&p), black_box(&delta)).unwrap())
    });
    c.bench_function("regime_grid_60x60", |b| {
        b.iter(|| regime_grid(&p, &delta, (0.0, 50.0), (0.0, 15.0), 60, 1.0).unwrap())
    });
}

fn likelihood(c: &mut Criterion) {
    let mut group = c.benchmark_group("neg_log_likelihood");
    for n in [300, 1200] {
        let inst = instance(n, 0.2, 1);
        let t = &inst.truth;
        group.bench_with_input(BenchmarkId::from_parameter(n), &inst, |b, inst| {
            b.iter(|| {
                neg_log_likelihood(&inst.observation, &inst.graph, &t.matrix, &t.partition, &inst.params).unwrap()
            })
        });
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let p = params(600, 0.2);
    c.bench_function("generate_instance_600", |b| {
        b.iter(|| generate_instance(&p, &GroundTruthMode::Random, black_box(3)).unwrap())
    });
}

fn estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("practical_estimate");
    group.sample_size(10);
    for n in [150, 300] {
        let inst = instance(n, 0.3, 2);
        let cfg = PracticalConfig::default();
        group.bench_with_input(BenchmarkId::from_parameter(n), &inst, |b, inst| {
            b.iter(|| practical_estimate(&inst.observation, &inst.graph, &inst.params, &cfg, 5).unwrap())
        });
    }
    group.finish();

    let small = ModelParams {
        n: 6,
        m: 2,
        c: 2,
        g: 3,
        r: 2,
        q: 2,
        theta: 0.2,
        p: 0.6,
        alpha: 2.5,
        beta: 1.0,
        gamma: 0.3,
    };
    let inst = generate_instance(&small, &GroundTruthMode::Random, 4).unwrap();
    c.bench_function("exact_ml_n6", |b| {
        b.iter(|| exact_ml(&inst.observation, &inst.graph, &small, &ExactConfig::default()).unwrap())
    });
}

criterion_group!(benches, threshold, likelihood, generation, estimators);
criterion_main!(benches);
