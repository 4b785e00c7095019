//! Log-determinant estimators built on `log det Q = tr log Q`.
//!
//! * exact: dense Cholesky, `Σ 2 log l_jj` (desk-scale reference);
//! * probing: `Σ_c v_cᵀ log(Q) v_c` over the colour classes of a distance-k
//!   colouring (vectors partition the coordinates, so no averaging);
//! * Hutchinson: `(1/s) Σ_j v_jᵀ log(Q) v_j` over full-support Rademacher
//!   vectors, unbiased for `tr log Q`.
//!
//! Per-vector work is independent and runs on the current rayon pool; the
//! partial results are reduced in vector order so the value does not depend
//! on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dense::{DenseCholesky, DEFAULT_DENSE_CAP};
use crate::error::{Error, Result};
use crate::krylov::{apply_log, SolveStats, SolverConfig};
use crate::probing::{color_distance_k, probing_vector, Coloring, ProbingMode};
use crate::quadrature::{
    build_log_quadrature, choose_order, estimate_spectral_bounds, QuadratureRule, SpectralBounds,
    DEFAULT_MARGIN,
};
use crate::sparse::{AdjacencyGraph, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogDetMethod {
    ExactDense,
    ExactCholesky,
    Probing { k: usize, mode: ProbingMode },
    Hutchinson { s: usize },
}

/// Two-sided interval half-widths at `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confidence {
    pub level: f64,
    /// Normal approximation from the sample standard deviation.
    pub normal_half_width: f64,
    /// Hoeffding bound for samples confined to `[n log λ_min, n log λ_max]`.
    pub hoeffding_half_width: f64,
    pub sample_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDetEstimate {
    pub value: f64,
    pub method: LogDetMethod,
    pub num_vectors: usize,
    pub stats: SolveStats,
    pub confidence: Option<Confidence>,
    pub quadrature_order: Option<usize>,
    pub bounds: Option<SpectralBounds>,
}

/// Exact `log det Q` from a dense Cholesky factorisation (`n <= cap`).
pub fn logdet_exact_dense(q: &CsrMatrix, cap: usize) -> Result<f64> {
    Ok(DenseCholesky::factor(q, cap)?.logdet())
}

/// `v_cᵀ log(Q) v_c` for one probing vector.
fn probe_one(
    q: &CsrMatrix,
    coloring: &Coloring,
    class: Vec<usize>,
    color: usize,
    rule: &QuadratureRule,
    cfg: &SolverConfig,
    mode: ProbingMode,
    seed: u64,
) -> Result<(f64, SolveStats)> {
    let v = probing_vector(coloring, class, color, mode, seed);
    let dense = v.to_dense(q.n());
    let applied = apply_log(q, &dense, rule, cfg).map_err(|e| Error::ProbingVector {
        index: color,
        source: Box::new(e),
    })?;
    Ok((v.dot(&applied.value), applied.stats))
}

/// Probing estimate `Σ_c v_cᵀ log(Q) v_c`.
pub fn logdet_probing(
    q: &CsrMatrix,
    coloring: &Coloring,
    rule: &QuadratureRule,
    cfg: &SolverConfig,
    mode: ProbingMode,
    seed: u64,
) -> Result<LogDetEstimate> {
    cfg.validate()?;
    if coloring.n() != q.n() {
        return Err(Error::DimensionMismatch {
            expected: q.n(),
            actual: coloring.n(),
        });
    }
    let classes = coloring.classes();
    let parts: Vec<Result<(f64, SolveStats)>> = classes
        .into_par_iter()
        .enumerate()
        .map(|(color, class)| probe_one(q, coloring, class, color, rule, cfg, mode, seed))
        .collect();
    let mut value = 0.0;
    let mut stats = SolveStats::default();
    for part in parts {
        let (x, s) = part?;
        value += x;
        stats += s;
    }
    Ok(LogDetEstimate {
        value,
        method: LogDetMethod::Probing {
            k: coloring.k,
            mode,
        },
        num_vectors: coloring.num_colors,
        stats,
        confidence: None,
        quadrature_order: Some(rule.order),
        bounds: Some(rule.bounds),
    })
}

/// Full-support Rademacher vector `j` of the sample stream under `seed`.
pub fn rademacher_vector(n: usize, seed: u64, j: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Hutchinson estimate `(1/s) Σ_j v_jᵀ log(Q) v_j` with normal and Hoeffding
/// confidence half-widths at `level`.
pub fn logdet_hutchinson(
    q: &CsrMatrix,
    s: usize,
    rule: &QuadratureRule,
    cfg: &SolverConfig,
    seed: u64,
    level: f64,
) -> Result<LogDetEstimate> {
    cfg.validate()?;
    if s == 0 {
        return Err(Error::InvalidArgument("Hutchinson needs s >= 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must be in (0, 1), got {level}")));
    }
    let n = q.n();
    let parts: Vec<Result<(f64, SolveStats)>> = (0..s)
        .into_par_iter()
        .map(|j| {
            let v = rademacher_vector(n, seed, j);
            let applied = apply_log(q, &v, rule, cfg).map_err(|e| Error::ProbingVector {
                index: j,
                source: Box::new(e),
            })?;
            Ok((crate::krylov::dot(&v, &applied.value), applied.stats))
        })
        .collect();
    let mut samples = Vec::with_capacity(s);
    let mut stats = SolveStats::default();
    for part in parts {
        let (x, st) = part?;
        samples.push(x);
        stats += st;
    }
    let mean = samples.iter().sum::<f64>() / s as f64;
    let sample_std = if s > 1 {
        (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s - 1) as f64).sqrt()
    } else {
        0.0
    };
    let z = Normal::standard().inverse_cdf(0.5 + 0.5 * level);
    let bounds = rule.bounds;
    let range = n as f64 * (bounds.lambda_max.ln() - bounds.lambda_min.ln());
    let hoeffding = range * ((2.0 / (1.0 - level)).ln() / (2.0 * s as f64)).sqrt();
    Ok(LogDetEstimate {
        value: mean,
        method: LogDetMethod::Hutchinson { s },
        num_vectors: s,
        stats,
        confidence: Some(Confidence {
            level,
            normal_half_width: z * sample_std / (s as f64).sqrt(),
            hoeffding_half_width: hoeffding,
            sample_std,
        }),
        quadrature_order: Some(rule.order),
        bounds: Some(bounds),
    })
}

/// Everything needed to turn a matrix into an estimate: the method and the
/// numerical knobs shared by the stochastic paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub method: LogDetMethod,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Quadrature order; `None` picks the smallest order whose scalar error
    /// is below `0.1 * solver.rel_tol`.
    pub order: Option<usize>,
    pub lanczos_iters: usize,
    pub margin: f64,
    pub level: f64,
    pub dense_cap: usize,
}

impl Estimator {
    pub fn new(method: LogDetMethod) -> Self {
        Self {
            method,
            solver: SolverConfig::default(),
            seed: 0,
            order: None,
            lanczos_iters: 200,
            margin: DEFAULT_MARGIN,
            level: 0.95,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }

    /// Spectral bounds and quadrature rule for `q`.
    pub fn rule_for(&self, q: &CsrMatrix) -> Result<QuadratureRule> {
        let bounds = estimate_spectral_bounds(q, self.lanczos_iters, self.margin)?.bounds;
        let order = match self.order {
            Some(order) => order,
            None => choose_order(bounds, 0.1 * self.solver.rel_tol)?,
        };
        build_log_quadrature(bounds, order)
    }

    pub fn estimate(&self, q: &CsrMatrix) -> Result<LogDetEstimate> {
        match self.method {
            LogDetMethod::ExactDense | LogDetMethod::ExactCholesky => Ok(LogDetEstimate {
                value: logdet_exact_dense(q, self.dense_cap)?,
                method: self.method,
                num_vectors: 0,
                stats: SolveStats::default(),
                confidence: None,
                quadrature_order: None,
                bounds: None,
            }),
            LogDetMethod::Probing { k, mode } => {
                let coloring = color_distance_k(&AdjacencyGraph::from_matrix(q), k)?;
                self.estimate_with_coloring(q, &coloring, mode)
            }
            LogDetMethod::Hutchinson { s } => {
                let rule = self.rule_for(q)?;
                logdet_hutchinson(q, s, &rule, &self.solver, self.seed, self.level)
            }
        }
    }

    /// Probing estimate with a precomputed colouring of `q`'s graph.
    pub fn estimate_with_coloring(
        &self,
        q: &CsrMatrix,
        coloring: &Coloring,
        mode: ProbingMode,
    ) -> Result<LogDetEstimate> {
        let rule = self.rule_for(q)?;
        logdet_probing(q, coloring, &rule, &self.solver, mode, self.seed)
    }
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T, F>(threads: usize, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
