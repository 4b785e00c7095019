mod common;

use common::{dense_log, grid_q};
use gmrf_logdet::krylov::apply_log;
use gmrf_logdet::probing::{
    color_distance_k, estimate_probing_distance, probing_vectors, ProbingMode,
};
use gmrf_logdet::quadrature::{build_log_quadrature, estimate_spectral_bounds, DEFAULT_MARGIN};
use gmrf_logdet::{AdjacencyGraph, GridSpec, SolverConfig};

#[test]
fn indicator_probing_equals_trace_plus_same_color_cross_terms() {
    let q = grid_q(8, 1.0, 1.0);
    let f = dense_log(&q);
    let coloring = color_distance_k(&AdjacencyGraph::from_matrix(&q), 2).unwrap();
    let mut probe = 0.0;
    for v in probing_vectors(&coloring, ProbingMode::Indicator, 0) {
        let x = v.to_dense(q.n());
        for (i, xi) in x.iter().enumerate() {
            for (j, xj) in x.iter().enumerate() {
                probe += xi * f[(i, j)] * xj;
            }
        }
    }
    let mut expected = f.trace();
    for i in 0..q.n() {
        for j in 0..q.n() {
            if i != j && coloring.color_of[i] == coloring.color_of[j] {
                expected += f[(i, j)];
            }
        }
    }
    assert!((probe - expected).abs() < 1e-10 * expected.abs().max(1.0));
}

#[test]
fn signed_probing_is_unbiased() {
    let q = grid_q(6, 0.5, 1.0);
    let f = dense_log(&q);
    let coloring = color_distance_k(&AdjacencyGraph::from_matrix(&q), 1).unwrap();
    let runs = 400;
    let samples: Vec<f64> = (0..runs)
        .map(|seed| {
            probing_vectors(&coloring, ProbingMode::Signed, seed)
                .iter()
                .map(|v| {
                    let x = v.to_dense(q.n());
                    let fx = &f * nalgebra::DVector::from_vec(x.clone());
                    v.dot(fx.as_slice())
                })
                .sum()
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / runs as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
    let se = (var / runs as f64).sqrt();
    assert!((mean - f.trace()).abs() < 3.0 * se + 1e-12, "{mean} vs {} (se {se})", f.trace());
}

/// Same ring scan as the heuristic, on a dense column.
fn dense_distance(q: &gmrf_logdet::CsrMatrix, col: &[f64], j: usize, eps: f64) -> usize {
    let levels = AdjacencyGraph::from_matrix(q).distance_levels(j, q.n()).unwrap();
    let first = levels
        .iter()
        .position(|ring| ring.iter().all(|&l| col[l].abs() < eps))
        .unwrap_or(levels.len());
    first - 1
}

#[test]
fn probing_distance_matches_dense_logm() {
    let q = grid_q(16, 1.0, 1.0);
    let f = dense_log(&q);
    let j = GridSpec::square(16).unwrap().center();
    let expected = dense_distance(&q, f.column(j).as_slice(), j, 1e-3);

    let bounds = estimate_spectral_bounds(&q, 200, DEFAULT_MARGIN).unwrap().bounds;
    let rule = build_log_quadrature(bounds, 24).unwrap();
    let cfg = SolverConfig::with_tol(1e-8);
    let krylov = estimate_probing_distance(&q, 1e-3, &[j], |e| {
        Ok(apply_log(&q, e, &rule, &cfg)?.value)
    })
    .unwrap();
    assert_eq!(krylov, expected);
    assert!(expected >= 1);
}

#[test]
fn probing_distance_grows_as_kappa_shrinks() {
    let j = GridSpec::square(16).unwrap().center();
    let distance = |kappa: f64| {
        let q = grid_q(16, kappa, 1.0);
        let f = dense_log(&q);
        estimate_probing_distance(&q, 1e-3, &[j], |e| {
            let col = e.iter().position(|&x| x == 1.0).unwrap();
            Ok(f.column(col).iter().copied().collect())
        })
        .unwrap()
    };
    let (near, far) = (distance(1.0), distance(0.1));
    assert!(far >= near, "kappa=0.1 gives {far}, kappa=1 gives {near}");
}
