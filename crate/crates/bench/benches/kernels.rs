use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use fblab_core::grid::{discrete_holder_norm, HolderMode};
use fblab_core::series::{certify_negative_coefficients, series_coefficients, SlopeConvention};
use fblab_core::solver::linalg::Tridiagonal;
use fblab_core::solver::{residual, solve_regularized, RegularizationSchedule, ScenarioLabel, ScenarioSpec};
use fblab_core::weiss::{weiss_energy, Anchor, WeissVariant};
use fblab_core::{Grid, ParabolicCylinder, SpaceTimeField};
use std::time::Duration;

/// `t + x²/2` on `[-1, 1] × [-0.1, 0]`: a smooth field whose negative set
/// shrinks to the origin.
fn inner_profile_field(nx: usize, nt: usize) -> SpaceTimeField {
    let grid = Grid::new(1, -1.0, 1.0, nx, -0.1, 0.0, nt).unwrap();
    SpaceTimeField::from_fn(grid, |x, t| t + 0.5 * x[0] * x[0]).unwrap()
}

fn tridiagonal(c: &mut Criterion) {
    let m = 399;
    let sys = Tridiagonal::new(m, 2.5);
    let rhs: Vec<f64> = (0..m).map(|i| (i as f64 * 0.01).sin()).collect();
    c.bench_function("tridiagonal_solve_399", |b| {
        b.iter_batched_ref(|| rhs.clone(), |r| sys.solve_in_place(black_box(r)), BatchSize::SmallInput)
    });
}

fn residual_field(c: &mut Criterion) {
    let u = inner_profile_field(401, 401);
    c.bench_function("residual_401x401", |b| b.iter(|| residual(black_box(&u))));
}

fn regularized_solve(c: &mut Criterion) {
    let spec = ScenarioSpec::builtin(ScenarioLabel::CollapsingInterval, 1, 101, 201).unwrap();
    let sched = RegularizationSchedule::default();
    let mut g = c.benchmark_group("solver");
    g.sample_size(10).measurement_time(Duration::from_secs(5));
    g.bench_function("regularized_solve_101x201_eps_0.0125", |b| b.iter(|| solve_regularized(&spec, 0.0125, &sched).unwrap()));
    g.finish();
}

fn weiss(c: &mut Criterion) {
    let u = inner_profile_field(401, 801);
    let mut g = c.benchmark_group("weiss");
    g.sample_size(20);
    g.bench_function("weiss_energy_r0.05", |b| b.iter(|| weiss_energy(&u, &Anchor::ORIGIN, black_box(0.05), WeissVariant::default()).unwrap()));
    g.finish();
}

fn series(c: &mut Criterion) {
    c.bench_function("series_coefficients_order_200", |b| {
        b.iter(|| series_coefficients(black_box(1.0), 200, SlopeConvention::default()).unwrap())
    });
    c.bench_function("sign_certificate_order_50", |b| {
        b.iter(|| certify_negative_coefficients(black_box(1.0), 50, SlopeConvention::default()).unwrap())
    });
}

fn holder(c: &mut Criterion) {
    let u = inner_profile_field(201, 201);
    let region = ParabolicCylinder::new([0.0, 0.0], -0.05, 0.2).unwrap();
    let mut g = c.benchmark_group("holder");
    g.sample_size(20);
    g.bench_function("discrete_holder_norm_parabolic", |b| {
        b.iter(|| discrete_holder_norm(&u, 0.5, &region, HolderMode::Parabolic).unwrap())
    });
    g.finish();
}

criterion_group!(kernels, tridiagonal, residual_field, regularized_solve, weiss, series, holder);
criterion_main!(kernels);
