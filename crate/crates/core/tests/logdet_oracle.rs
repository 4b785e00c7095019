mod common;

use common::{eigen_logdet, grid_q};
use gmrf_logdet::logdet::{logdet_exact_dense, logdet_hutchinson, logdet_probing, with_threads};
use gmrf_logdet::probing::color_distance_k;
use gmrf_logdet::{AdjacencyGraph, Estimator, LogDetMethod, ProbingMode, SolverConfig};

#[test]
fn exact_matches_eigenvalue_sum() {
    let q = grid_q(8, 1.0, 1.0);
    let exact = logdet_exact_dense(&q, 4096).unwrap();
    assert!((exact - eigen_logdet(&q)).abs() < 1e-10 * exact.abs().max(1.0));
}

#[test]
fn exact_rejects_over_cap() {
    let q = grid_q(8, 1.0, 1.0);
    assert!(logdet_exact_dense(&q, 32).is_err());
}

#[test]
fn probing_k6_matches_exact() {
    let q = grid_q(16, 1.0, 1.0);
    let exact = logdet_exact_dense(&q, 4096).unwrap();
    let est = Estimator::new(LogDetMethod::Probing { k: 6, mode: ProbingMode::Signed })
        .estimate(&q)
        .unwrap();
    assert!(((est.value - exact) / exact).abs() < 1e-3, "{} vs {exact}", est.value);
}

#[test]
fn probing_error_shrinks_with_k() {
    let q = grid_q(16, 1.0, 1.0);
    let exact = logdet_exact_dense(&q, 4096).unwrap();
    let errors: Vec<f64> = [2, 4, 6]
        .iter()
        .map(|&k| {
            let est = Estimator::new(LogDetMethod::Probing { k, mode: ProbingMode::Signed })
                .estimate(&q)
                .unwrap();
            (est.value - exact).abs()
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] <= w[0]), "{errors:?}");
}

#[test]
fn probing_scaling_identity() {
    let (base, scaled) = (grid_q(16, 1.0, 1.0), grid_q(16, 1.0, 3.0));
    let n = base.n() as f64;
    let estimator = Estimator::new(LogDetMethod::Probing { k: 6, mode: ProbingMode::Signed });
    let a = estimator.estimate(&base).unwrap().value;
    let b = estimator.estimate(&scaled).unwrap().value;
    let k6_error = (a - logdet_exact_dense(&base, 4096).unwrap()).abs();
    let identity_gap = (b - (a + n * 9f64.ln())).abs();
    assert!(identity_gap <= 2.0 * k6_error.max(1e-6), "{identity_gap} vs {k6_error}");
    let exact_gap = logdet_exact_dense(&scaled, 4096).unwrap()
        - logdet_exact_dense(&base, 4096).unwrap()
        - n * 9f64.ln();
    assert!(exact_gap.abs() < 1e-8);
}

#[test]
fn probing_error_below_tolerance_beyond_decay_distance() {
    // kappa = 1: log(Q) entries are below 1e-3 past a handful of rings
    let q = grid_q(12, 1.0, 1.0);
    let exact = logdet_exact_dense(&q, 4096).unwrap();
    let est = Estimator::new(LogDetMethod::Probing { k: 8, mode: ProbingMode::Signed })
        .estimate(&q)
        .unwrap();
    assert!(((est.value - exact) / exact).abs() < 1e-3);
}

#[test]
fn probing_is_bitwise_deterministic_across_threads() {
    let q = grid_q(16, 1.0, 1.0);
    let coloring = color_distance_k(&AdjacencyGraph::from_matrix(&q), 4).unwrap();
    let estimator = Estimator::new(LogDetMethod::Probing { k: 4, mode: ProbingMode::Signed });
    let rule = estimator.rule_for(&q).unwrap();
    let run = |threads| {
        with_threads(threads, || {
            logdet_probing(&q, &coloring, &rule, &SolverConfig::default(), ProbingMode::Signed, 5)
                .unwrap()
                .value
        })
        .unwrap()
    };
    let one = run(1);
    assert_eq!(one.to_bits(), run(3).to_bits());
}

#[test]
fn hutchinson_grand_mean_is_unbiased() {
    let q = grid_q(8, 0.5, 1.0);
    let exact = logdet_exact_dense(&q, 4096).unwrap();
    let rule = Estimator::new(LogDetMethod::Hutchinson { s: 1 }).rule_for(&q).unwrap();
    let cfg = SolverConfig::with_tol(1e-6);
    let runs: Vec<f64> = (0..50)
        .map(|seed| logdet_hutchinson(&q, 10, &rule, &cfg, seed, 0.95).unwrap().value)
        .collect();
    let mean = runs.iter().sum::<f64>() / 50.0;
    let var = runs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 49.0;
    let se = (var / 50.0).sqrt();
    assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact}, se {se}");
}

#[test]
fn hutchinson_has_confidence_probing_does_not() {
    let q = grid_q(6, 1.0, 1.0);
    let h = Estimator::new(LogDetMethod::Hutchinson { s: 4 }).estimate(&q).unwrap();
    let p = Estimator::new(LogDetMethod::Probing { k: 2, mode: ProbingMode::Signed })
        .estimate(&q)
        .unwrap();
    assert!(h.confidence.is_some() && p.confidence.is_none());
    assert_eq!(h.num_vectors, 4);
}
