//! Benchmarks for the hot kernels: segment exponentials, flow norms along
//! simulated switching paths, and the hierarchy construction.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use std::hint::black_box;
use switchlyap_core::ctmc::MarkovParams;
use switchlyap_core::flows::{Signal, SwitchedSystem};
use switchlyap_core::hierarchy::{self, RateEntry, RateFamily};
use switchlyap_core::{detlyap, linalg, pdmp};

fn planar_system() -> SwitchedSystem {
    SwitchedSystem::new(vec![
        DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, -1.0]),
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]),
    ])
    .unwrap()
}

fn bench_matrix_exponential(c: &mut Criterion) {
    let a2 = DMatrix::from_row_slice(2, 2, &[0.1, -1.3, 0.9, -0.4]);
    let a4 = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.1, -1.3, 0.2, 0.0, //
            0.9, -0.4, 0.0, 0.3, //
            0.0, 0.2, -0.5, 1.0, //
            -0.3, 0.0, -1.0, 0.2,
        ],
    );
    c.bench_function("expm 2x2 closed form", |b| {
        b.iter(|| linalg::matrix_exponential(black_box(&a2), black_box(0.37)).unwrap())
    });
    c.bench_function("expm 4x4 pade", |b| {
        b.iter(|| linalg::matrix_exponential(black_box(&a4), black_box(0.37)).unwrap())
    });
}

fn bench_flow_norm(c: &mut Criterion) {
    let sys = planar_system();
    let segments: Vec<(f64, usize)> = (0..256)
        .map(|k| (0.01 + 0.001 * (k % 7) as f64, k % 2))
        .collect();
    let sig = Signal::new(segments).unwrap();
    c.bench_function("log_flow_norm 256 segments", |b| {
        b.iter(|| switchlyap_core::flows::log_flow_norm(black_box(&sys), black_box(&sig)).unwrap())
    });
}

fn bench_lambda_p(c: &mut Criterion) {
    let sys = planar_system();
    let params = MarkovParams::new(
        DVector::from_vec(vec![0.5, 0.5]),
        10.0,
        DMatrix::from_element(2, 2, 0.5),
    )
    .unwrap();
    c.bench_function("lambda_p 32 trajectories T=50", |b| {
        b.iter(|| pdmp::lambda_p_estimate(black_box(&sys), &params, 50.0, 32, 0).unwrap())
    });
}

fn bench_hull_search(c: &mut Criterion) {
    let sys = planar_system();
    c.bench_function("hull abscissa pattern search", |b| {
        b.iter(|| detlyap::max_abscissa_over_hull(black_box(&sys), 4).unwrap())
    });
}

fn bench_hierarchy(c: &mut Criterion) {
    let family = RateFamily::new(
        4,
        vec![
            RateEntry { from: 0, to: 1, coeff: 1.0, exponent: 0.5 },
            RateEntry { from: 1, to: 0, coeff: 1.0, exponent: 1.0 },
            RateEntry { from: 1, to: 2, coeff: 1.0, exponent: 0.5 },
            RateEntry { from: 2, to: 1, coeff: 1.0, exponent: 0.5 },
            RateEntry { from: 3, to: 2, coeff: 1.0, exponent: 0.5 },
            RateEntry { from: 2, to: 3, coeff: 1.0, exponent: 1.0 },
        ],
    )
    .unwrap();
    let grid = hierarchy::default_n_grid();
    c.bench_function("build_hierarchy four states", |b| {
        b.iter(|| hierarchy::build_hierarchy(black_box(&family), &grid, 0.05).unwrap())
    });
}

criterion_group!(
    benches,
    bench_matrix_exponential,
    bench_flow_norm,
    bench_lambda_p,
    bench_hull_search,
    bench_hierarchy
);
criterion_main!(benches);
