//! Benchmarks for the hot paths: convolved-density evaluation, ball
//! probabilities, score/trace evaluation, and the single-delta estimator.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use std::hint::black_box;

use lid_core::convolve::{BallMethod, BallOracle, ConvolutionOracle, ConvolveMethod};
use lid_core::estimators::{flipd, TraceMode};
use lid_core::geometry::{DensitySpec, ManifoldSpec};
use lid_core::schedule::ScheduleSpec;
use lid_core::score::ScoreField;

fn circle_density() -> DensitySpec {
    DensitySpec::uniform(ManifoldSpec::circle(1.0).unwrap()).unwrap()
}

fn ve() -> ScheduleSpec {
    ScheduleSpec::ve(1e-4, 50.0).unwrap()
}

fn bench_log_rho_quadrature(c: &mut Criterion) {
    let oracle = ConvolutionOracle::new(
        circle_density(),
        ConvolveMethod::Quadrature { min_nodes: 2048 },
    )
    .unwrap();
    let x = DVector::from_vec(vec![1.0, 0.0]);
    c.bench_function("log_rho_gauss/circle_quadrature_2048", |b| {
        b.iter(|| oracle.log_rho_gauss(black_box(&x), black_box(-4.0)).unwrap())
    });
}

fn bench_log_rho_closed_form(c: &mut Criterion) {
    let pts = (0..64)
        .map(|i| DVector::from_vec(vec![i as f64 * 0.1, (i as f64 * 0.1).sin()]))
        .collect::<Vec<_>>();
    let density =
        DensitySpec::empirical(ManifoldSpec::point_set(pts).unwrap()).unwrap();
    let oracle = ConvolutionOracle::new(density, ConvolveMethod::ClosedForm).unwrap();
    let x = DVector::from_vec(vec![1.0, 0.5]);
    c.bench_function("log_rho_gauss/point_set_64_closed_form", |b| {
        b.iter(|| oracle.log_rho_gauss(black_box(&x), black_box(-2.0)).unwrap())
    });
}

fn bench_ball_probability(c: &mut Criterion) {
    let exact = BallOracle::new(circle_density(), BallMethod::Exact);
    let x = DVector::from_vec(vec![1.0, 0.0]);
    c.bench_function("ball_probability/circle_exact", |b| {
        b.iter(|| exact.probability(black_box(&x), black_box(-3.0)).unwrap())
    });

    let mc = BallOracle::new(
        circle_density(),
        BallMethod::MonteCarlo {
            samples: 100_000,
            seed: 7,
        },
    );
    c.bench_function("ball_probability/circle_mc_1e5", |b| {
        b.iter(|| mc.probability(black_box(&x), black_box(-3.0)).unwrap())
    });
}

fn bench_score_and_trace(c: &mut Criterion) {
    let field = ScoreField::for_density(&circle_density(), ve(), 2048).unwrap();
    let y = DVector::from_vec(vec![1.0, 0.0]);
    let t = ve().t_of_delta(-4.0).unwrap();
    c.bench_function("score/circle_quadrature", |b| {
        b.iter(|| field.score(black_box(&y), black_box(t)).unwrap())
    });
    c.bench_function("exact_trace/circle_quadrature", |b| {
        b.iter(|| field.exact_trace(black_box(&y), black_box(t)).unwrap())
    });
}

fn bench_flipd(c: &mut Criterion) {
    let field = ScoreField::for_density(&circle_density(), ve(), 2048).unwrap();
    let x = DVector::from_vec(vec![1.0, 0.0]);
    c.bench_function("flipd/circle_exact_trace", |b| {
        b.iter(|| flipd(black_box(&field), black_box(&x), black_box(-4.0), TraceMode::Exact).unwrap())
    });
}

criterion_group!(
    benches,
    bench_log_rho_quadrature,
    bench_log_rho_closed_form,
    bench_ball_probability,
    bench_score_and_trace,
    bench_flipd
);
criterion_main!(benches);
