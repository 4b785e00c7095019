use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gmrf_logdet::krylov::apply_log;
use gmrf_logdet::logdet::rademacher_vector;
use gmrf_logdet::probing::color_distance_k;
use gmrf_logdet::quadrature::{build_log_quadrature, estimate_spectral_bounds, DEFAULT_MARGIN};
use gmrf_logdet::spde::build_precision;
use gmrf_logdet::{
    AdjacencyGraph, CsrMatrix, Estimator, GridSpec, Hyperparams, LogDetMethod, ProbingMode,
    SolverConfig,
};

fn grid_q(side: usize, kappa: f64) -> CsrMatrix {
    let grid = GridSpec::square(side).unwrap();
    build_precision(&grid, &Hyperparams::new(kappa, 1.0).unwrap()).unwrap()
}

fn matvec(c: &mut Criterion) {
    let mut group = c.benchmark_group("matvec");
    for side in [64, 256] {
        let q = grid_q(side, 1.0);
        let x = rademacher_vector(q.n(), 1, 0);
        let mut y = vec![0.0; q.n()];
        group.bench_with_input(BenchmarkId::new("serial", side), &side, |b, _| {
            b.iter(|| q.matvec_into(black_box(&x), &mut y))
        });
        group.bench_with_input(BenchmarkId::new("parallel", side), &side, |b, _| {
            b.iter(|| q.par_matvec(black_box(&x)).unwrap())
        });
    }
    group.finish();
}

fn coloring(c: &mut Criterion) {
    let mut group = c.benchmark_group("color_distance_k");
    let graph = GridSpec::square(128).unwrap().stencil_graph();
    let qgraph = AdjacencyGraph::from_matrix(&grid_q(128, 1.0));
    for k in [2, 4, 6] {
        group.bench_with_input(BenchmarkId::new("stencil", k), &k, |b, &k| {
            b.iter(|| color_distance_k(&graph, k).unwrap())
        });
    }
    group.bench_function("matrix/3", |b| b.iter(|| color_distance_k(&qgraph, 3).unwrap()));
    group.finish();
}

fn log_application(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply_log");
    group.sample_size(20);
    let cfg = SolverConfig::with_tol(1e-3);
    for kappa in [1.0, 0.1] {
        let q = grid_q(128, kappa);
        let bounds = estimate_spectral_bounds(&q, 200, DEFAULT_MARGIN).unwrap().bounds;
        let rule = build_log_quadrature(bounds, 16).unwrap();
        let v = rademacher_vector(q.n(), 2, 0);
        group.bench_with_input(BenchmarkId::new("kappa", kappa), &kappa, |b, _| {
            b.iter(|| apply_log(&q, black_box(&v), &rule, &cfg).unwrap())
        });
    }
    group.finish();
}

fn estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("logdet_64x64");
    group.sample_size(10);
    let q = grid_q(64, 0.5);
    let methods = [
        ("exact", LogDetMethod::ExactDense),
        ("probing_k2", LogDetMethod::Probing { k: 2, mode: ProbingMode::Signed }),
        ("probing_k6", LogDetMethod::Probing { k: 6, mode: ProbingMode::Signed }),
        ("hutchinson_s30", LogDetMethod::Hutchinson { s: 30 }),
    ];
    for (name, method) in methods {
        let est = Estimator::new(method);
        group.bench_function(name, |b| b.iter(|| est.estimate(black_box(&q)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, matvec, coloring, log_application, estimators);
criterion_main!(benches);
