//! End-to-end acceptance checks. All criteria run sequentially inside one
//! test so the counting allocator only sees the memory criterion's work.
//! One PASS/FAIL line per criterion goes straight to stderr.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use common::{dense, grid_q};
use gmrf_logdet::krylov::cocg_m_solve;
use gmrf_logdet::likelihood::{fit_hyperparams, sample_gmrf_dense, FitBackend, FitConfig};
use gmrf_logdet::logdet::{logdet_exact_dense, logdet_hutchinson, with_threads};
use gmrf_logdet::probing::color_distance_k;
use gmrf_logdet::quadrature::{build_log_quadrature, SpectralBounds};
use gmrf_logdet::spde::build_precision;
use gmrf_logdet::{
    AdjacencyGraph, Boundary, Coloring, CsrMatrix, Estimator, GridSpec, Hyperparams, LogDetMethod,
    ProbingMode, SolverConfig,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Ordering::SeqCst) + layout.size();
            PEAK.fetch_max(now, Ordering::SeqCst);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::SeqCst);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let now = CURRENT.fetch_add(new_size - layout.size(), Ordering::SeqCst) + new_size - layout.size();
                PEAK.fetch_max(now, Ordering::SeqCst);
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::SeqCst);
            }
        }
        p
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, outcome: &Outcome) {
    let status = if outcome.pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr();
    writeln!(err, "criterion {id}: {status}  {}", outcome.detail).unwrap();
}

fn probing_k6_16x16() -> (CsrMatrix, Estimator, Coloring) {
    let q = grid_q(16, 1.0, 1.0);
    let est = Estimator::new(LogDetMethod::Probing { k: 6, mode: ProbingMode::Signed });
    let coloring = color_distance_k(&AdjacencyGraph::from_matrix(&q), 6).unwrap();
    (q, est, coloring)
}

fn oracle_equivalence() -> Outcome {
    let (q, est, coloring) = probing_k6_16x16();
    let exact = logdet_exact_dense(&q, 4096).unwrap();
    let start = Instant::now();
    let value = with_threads(1, || est.estimate_with_coloring(&q, &coloring, ProbingMode::Signed))
        .unwrap()
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let rel = ((value.value - exact) / exact).abs();
    Outcome {
        pass: rel <= 1e-3 && secs <= 10.0,
        detail: format!(
            "probing k=6 {:.6} vs dense {exact:.6}, rel err {rel:.2e}, N={}, {} vectors, {secs:.2}s",
            value.value,
            value.quadrature_order.unwrap(),
            value.num_vectors
        ),
    }
}

fn monotone_k_convergence() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for kappa in [1.0, 0.1] {
        let q = grid_q(16, kappa, 1.0);
        let exact = logdet_exact_dense(&q, 4096).unwrap();
        let errors: Vec<f64> = [2, 4, 6, 8]
            .iter()
            .map(|&k| {
                let est = Estimator::new(LogDetMethod::Probing { k, mode: ProbingMode::Signed });
                (est.estimate(&q).unwrap().value - exact).abs()
            })
            .collect();
        let violations = errors.windows(2).filter(|w| w[1] > w[0]).count();
        pass &= violations <= 1;
        detail.push(format!(
            "kappa={kappa}: errors {} ({violations} violations)",
            errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ")
        ));
    }
    Outcome {
        pass,
        detail: detail.join("; "),
    }
}

fn quadrature_rate() -> Outcome {
    let start = Instant::now();
    let bounds = SpectralBounds::new(0.1, 10.0).unwrap();
    let e8 = build_log_quadrature(bounds, 8).unwrap().max_scalar_error(256);
    let e16 = build_log_quadrature(bounds, 16).unwrap().max_scalar_error(256);
    let secs = start.elapsed().as_secs_f64();
    let ratio = e16 / e8;
    let target = (-2.0 * std::f64::consts::PI * 8.0 / (100f64.ln() + 6.0)).exp();
    Outcome {
        pass: ratio >= 0.5 * target && ratio <= 2.0 * target && secs < 1.0,
        detail: format!(
            "err(8)={e8:.3e} err(16)={e16:.3e} ratio {ratio:.3e}, required [{:.3e}, {:.3e}], {secs:.3}s",
            0.5 * target,
            2.0 * target
        ),
    }
}

fn multi_shift_economy() -> Outcome {
    let q = grid_q(12, 1.0, 1.0);
    let eig = dense(&q).symmetric_eigen().eigenvalues;
    let bounds = SpectralBounds::new(eig.min() * 0.95, eig.max() * 1.05).unwrap();
    let rule = build_log_quadrature(bounds, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let b: Vec<f64> = (0..q.n()).map(|_| rng.random_range(-1.0..1.0)).collect();
    // solution error is bounded by cond x residual, so a 1e-3 match of x
    // needs a tighter residual than 1e-3
    let tol = 1e-4;
    let res = cocg_m_solve(&q, &b, &rule.shifts, &SolverConfig::with_tol(tol)).unwrap();
    let qd = dense(&q).map(|v| Complex64::new(v, 0.0));
    let bc = DVector::from_iterator(b.len(), b.iter().map(|&v| Complex64::new(v, 0.0)));
    let mut worst: f64 = 0.0;
    for (sigma, x) in rule.shifts.iter().zip(&res.solutions) {
        let a = &qd - DMatrix::<Complex64>::identity(q.n(), q.n()) * *sigma;
        let reference = a.lu().solve(&bc).unwrap();
        worst = worst.max((DVector::from_column_slice(x) - &reference).norm() / reference.norm());
    }
    let equal = res.stats.seed_matvecs == res.stats.seed_iterations;
    Outcome {
        pass: equal && worst <= 1e-3 && res.all_converged(),
        detail: format!(
            "seed matvecs {} == seed iterations {} ({} verification matvecs), rel_tol {tol:e}, worst rel err {worst:.2e}",
            res.stats.seed_matvecs, res.stats.seed_iterations, res.stats.verification_matvecs
        ),
    }
}

fn hutchinson_statistics() -> Outcome {
    let q = grid_q(12, 0.5, 1.0);
    let exact = logdet_exact_dense(&q, 4096).unwrap();
    let est = Estimator::new(LogDetMethod::Hutchinson { s: 200 });
    let rule = est.rule_for(&q).unwrap();
    let (mut within, mut hoeffding) = (0, 0);
    for seed in 0..100 {
        let r = logdet_hutchinson(&q, 200, &rule, &est.solver, seed, 0.95).unwrap();
        let conf = r.confidence.unwrap();
        let se = conf.sample_std / (200f64).sqrt();
        within += ((r.value - exact).abs() <= 3.0 * se) as usize;
        hoeffding += ((r.value - exact).abs() <= conf.hoeffding_half_width) as usize;
    }
    Outcome {
        pass: within >= 95 && hoeffding >= 95,
        detail: format!("within 3 s.e.: {within}/100, Hoeffding covers: {hoeffding}/100"),
    }
}

fn brute_force_valid(graph: &AdjacencyGraph, c: &Coloring) -> bool {
    let n = graph.n();
    (0..n).all(|a| {
        let ball = graph.distance_ball(a, c.k).unwrap();
        ball.iter().all(|&b| b == a || c.color_of[a] != c.color_of[b])
    })
}

fn coloring_validity_and_granularity() -> Outcome {
    let grid16 = GridSpec::square(16).unwrap();
    let q16 = grid_q(16, 1.0, 1.0);
    let mut valid = true;
    for graph in [grid16.stencil_graph(), AdjacencyGraph::from_matrix(&q16)] {
        for k in 1..=6 {
            valid &= brute_force_valid(&graph, &color_distance_k(&graph, k).unwrap());
        }
    }
    let mut granular = true;
    let mut rows = Vec::new();
    for k in 1..=6 {
        let counts: Vec<usize> = [8, 16, 32]
            .iter()
            .map(|&side| color_distance_k(&GridSpec::square(side).unwrap().stencil_graph(), k).unwrap().num_colors)
            .collect();
        let spread = counts.iter().max().unwrap() - counts.iter().min().unwrap();
        granular &= spread <= 2;
        rows.push(format!("k={k}:{counts:?}"));
    }
    Outcome {
        pass: valid && granular,
        detail: format!(
            "exhaustive validity k=1..6 on 16x16: {}; colours on 8/16/32 stencil graphs {}",
            if valid { "ok" } else { "VIOLATED" },
            rows.join(" ")
        ),
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (mean, var.sqrt())
}

fn fit_recovery() -> Outcome {
    let start = Instant::now();
    let grid = GridSpec::square(32).unwrap();
    let cfg = FitConfig {
        backend: FitBackend::Probing {
            mode: ProbingMode::Indicator,
        },
        ..FitConfig::default()
    };
    let init = Hyperparams::new(0.5, 0.5).unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (kappa, tau) in [(1.0, 1.0), (0.1, 1.0)] {
        let q = grid_q(32, kappa, tau);
        let mut kappas = Vec::new();
        let mut taus = Vec::new();
        let mut trend_ok = 0;
        for seed in 0..10 {
            let x = sample_gmrf_dense(&q, seed, 4096).unwrap();
            let (h, trace) = fit_hyperparams(&x, &grid, init, &cfg).unwrap();
            kappas.push(h.kappa);
            taus.push(h.tau);
            let ph = &trace.phases;
            let trend = ph.windows(2).all(|w| w[1].kappa <= w[0].kappa && w[1].tau >= w[0].tau);
            trend_ok += trend as usize;
        }
        let (km, ks) = mean_std(&kappas);
        let (tm, ts) = mean_std(&taus);
        // every realisation within 3 sd of the truth; the mean-based check
        // is printed for context only
        let inside = kappas.iter().all(|k| (k - kappa).abs() <= 3.0 * ks)
            && taus.iter().all(|t| (t - tau).abs() <= 3.0 * ts);
        let mean_inside = (km - kappa).abs() <= 3.0 * ks && (tm - tau).abs() <= 3.0 * ts;
        pass &= inside;
        let worst = kappas.iter().map(|k| (k - kappa).abs() / ks).fold(0.0, f64::max);
        let mut line = format!(
            "({kappa},{tau}): kappa {km:.4}+-{ks:.4}, tau {tm:.4}+-{ts:.4}, all within 3 sd: {inside} \
             (worst kappa {worst:.2} sd, mean within 3 sd: {mean_inside})"
        );
        if kappa < 1.0 {
            pass &= trend_ok == 10;
            line += &format!(", per-phase trend in {trend_ok}/10");
        }
        detail.push(line);
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs <= 600.0;
    Outcome {
        pass,
        detail: format!("{}; {secs:.0}s", detail.join("; ")),
    }
}

fn determinism() -> Outcome {
    let (q, est, coloring) = probing_k6_16x16();
    let values: Vec<f64> = [1, 2, 8]
        .iter()
        .map(|&t| {
            with_threads(t, || est.estimate_with_coloring(&q, &coloring, ProbingMode::Signed))
                .unwrap()
                .unwrap()
                .value
        })
        .collect();
    let bits: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
    Outcome {
        pass: bits.windows(2).all(|w| w[0] == w[1]),
        detail: format!("1/2/8 threads: {values:?}"),
    }
}

fn memory_shape() -> Outcome {
    let grid = GridSpec::new(&[128, 128, 8], Boundary::Neumann).unwrap();
    let q = build_precision(&grid, &Hyperparams::new(1.0, 1.0).unwrap()).unwrap();
    let est = Estimator::new(LogDetMethod::Probing { k: 2, mode: ProbingMode::Signed });
    let baseline = CURRENT.load(Ordering::SeqCst);
    PEAK.store(baseline, Ordering::SeqCst);
    let result = with_threads(1, || est.estimate(&q)).unwrap().unwrap();
    let peak = PEAK.load(Ordering::SeqCst) - baseline;
    let order = result.quadrature_order.unwrap();
    let vectors = 2 * (order + 4) * q.n() * std::mem::size_of::<f64>();
    let budget = 4 * (q.memory_bytes() + vectors);
    let mb = |b: usize| b as f64 / (1024.0 * 1024.0);
    Outcome {
        pass: peak <= budget,
        detail: format!(
            "n={} N={order}: peak {:.1} MiB vs 4 x (matrix {:.1} + vectors {:.1}) = {:.1} MiB",
            q.n(),
            mb(peak),
            mb(q.memory_bytes()),
            mb(vectors),
            mb(budget)
        ),
    }
}

#[test]
fn acceptance() {
    let criteria: [(usize, fn() -> Outcome); 9] = [
        (1, oracle_equivalence),
        (2, monotone_k_convergence),
        (3, quadrature_rate),
        (4, multi_shift_economy),
        (5, hutchinson_statistics),
        (6, coloring_validity_and_granularity),
        (7, fit_recovery),
        (8, determinism),
        (9, memory_shape),
    ];
    let mut failed = Vec::new();
    for (id, run) in criteria {
        let outcome = run();
        report(id, &outcome);
        if !outcome.pass {
            failed.push(id);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
