use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfsmp::measure::{distance_squared, norm_squared};
use mfsmp::optimize::gradient_at;
use mfsmp::{
    presets, simulate_forward, solve_backward, solve_state, ControlProcess, EmpiricalMeasure,
    InformationMode, RegressionBasis, TimeGrid,
};

fn measure_norm(c: &mut Criterion) {
    let mut group = c.benchmark_group("measure");
    for atoms in [100usize, 10_000] {
        let a: Vec<f64> = (0..atoms).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
        let (mu, eta) = (
            EmpiricalMeasure::uniform(&a).unwrap(),
            EmpiricalMeasure::uniform(&b).unwrap(),
        );
        group.bench_with_input(BenchmarkId::new("norm_squared", atoms), &mu, |bch, mu| {
            bch.iter(|| norm_squared(black_box(mu)))
        });
        group.bench_with_input(
            BenchmarkId::new("distance_squared", atoms),
            &(mu.clone(), eta),
            |bch, (m, e)| bch.iter(|| distance_squared(black_box(m), black_box(e))),
        );
    }
    group.finish();
}

fn forward(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let u = ControlProcess::constant(0.0, grid.nodes());
    let gbm = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.0).unwrap();
    let mr = presets::mean_reverting(1.0, 0.2, 1.0, 1.0).unwrap();
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    group.bench_function("gbm_10k", |b| {
        b.iter(|| simulate_forward(&gbm, &u, &grid, 10_000, 1).unwrap())
    });
    group.bench_function("mean_reverting_10k", |b| {
        b.iter(|| simulate_forward(&mr, &u, &grid, 10_000, 1).unwrap())
    });
    group.finish();
}

fn backward(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let u = ControlProcess::constant(0.0, grid.nodes());
    let basis = RegressionBasis::default();
    let linear = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.1, 0.0).unwrap();
    let coupled = presets::gbm(0.05, 0.2, 1.0, 1.0, 0.0, 0.1).unwrap();
    let ens = simulate_forward(&linear, &u, &grid, 10_000, 1).unwrap();
    let c_ens = simulate_forward(&coupled, &u, &grid, 10_000, 1).unwrap();
    let mut group = c.benchmark_group("backward");
    group.sample_size(10);
    group.bench_function("linear_10k", |b| {
        b.iter(|| solve_backward(&linear, &ens, &basis).unwrap())
    });
    group.bench_function("mean_field_10k", |b| {
        b.iter(|| solve_backward(&coupled, &c_ens, &basis).unwrap())
    });
    group.finish();
}

fn adjoint_gradient(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 50).unwrap();
    let u = ControlProcess::constant(0.0, grid.nodes());
    let basis = RegressionBasis::default();
    let lq = presets::lq(1.0, 0.2, 1.0, InformationMode::Trivial).unwrap();
    let state = solve_state(&lq, &u, &grid, 10_000, 1, &basis).unwrap();
    let mut group = c.benchmark_group("adjoint");
    group.sample_size(10);
    group.bench_function("lq_gradient_10k", |b| {
        b.iter(|| gradient_at(&lq, &u, &state, &basis).unwrap())
    });
    group.finish();
}

criterion_group!(benches, measure_norm, forward, backward, adjoint_gradient);
criterion_main!(benches);
