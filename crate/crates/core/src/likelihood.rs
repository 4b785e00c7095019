//! Gauss-linear objective, GMRF negative log-likelihood, posterior mode and
//! hyperparameter fitting by modified Newton with colouring escalation.
//!
//! The model is `y = A(θ)x + ε`, `ε ~ N(0, Q₁⁻¹)`, `x ~ N(μ, Q_x(η)⁻¹)` with
//! `η = (κ, τ)` and `Q_x` the SPDE precision on a grid.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dense::{DenseCholesky, DEFAULT_DENSE_CAP};
use crate::error::{Error, Result};
use crate::krylov::{cg_solve, dot, SolveStats, SolverConfig};
use crate::logdet::{logdet_exact_dense, logdet_probing};
use crate::probing::{color_distance_k, Coloring, ProbingMode};
use crate::quadrature::{build_log_quadrature, choose_order, QuadratureRule, SpectralBounds};
use crate::sparse::{AdjacencyGraph, CsrMatrix};
use crate::spde::{build_precision, precision_spectral_bounds, GridSpec, Hyperparams};

/// Rectangular sparse matrix (CSR), used for forward operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(i, j, _) in &sorted {
            if i >= rows || j >= cols {
                return Err(Error::InvalidMatrix(format!(
                    "entry ({i}, {j}) outside {rows}x{cols}"
                )));
            }
        }
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_offsets = vec![0; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((i, j));
            row_offsets[i + 1] += 1;
            col_indices.push(j);
            values.push(v);
        }
        for i in 0..rows {
            row_offsets[i + 1] += row_offsets[i];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        self.col_indices[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| self.row(i).map(|(j, v)| v * x[j]).sum()).collect())
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows,
                actual: y.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for (i, yi) in y.iter().enumerate() {
            for (j, v) in self.row(i) {
                out[j] += v * yi;
            }
        }
        Ok(out)
    }
}

/// Observation-noise precision `Q₁`.
#[derive(Debug, Clone, PartialEq)]
pub enum NoisePrecision {
    /// `q·I`.
    Scalar(f64),
    Matrix(CsrMatrix),
}

impl NoisePrecision {
    fn check(&self, m: usize) -> Result<()> {
        match self {
            NoisePrecision::Scalar(q) if *q > 0.0 && q.is_finite() => Ok(()),
            NoisePrecision::Scalar(q) => Err(Error::InvalidArgument(format!(
                "noise precision must be positive, got {q}"
            ))),
            NoisePrecision::Matrix(q) if q.n() == m => Ok(()),
            NoisePrecision::Matrix(q) => Err(Error::DimensionMismatch {
                expected: m,
                actual: q.n(),
            }),
        }
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            NoisePrecision::Scalar(q) => Ok(v.iter().map(|x| q * x).collect()),
            NoisePrecision::Matrix(q) => q.matvec(v),
        }
    }

    /// `log det Q₁` for an `m`-dimensional observation.
    pub fn logdet(&self, m: usize, cap: usize) -> Result<f64> {
        match self {
            NoisePrecision::Scalar(q) => Ok(m as f64 * q.ln()),
            NoisePrecision::Matrix(q) => logdet_exact_dense(q, cap),
        }
    }
}

pub type ForwardBuilder = Arc<dyn Fn(&[f64]) -> Result<SparseOperator> + Send + Sync>;
pub type EtaLogPrior = Arc<dyn Fn(&Hyperparams) -> f64 + Send + Sync>;
pub type ThetaLogPrior = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `y = A(θ)x + ε` with SPDE prior on `x`.
#[derive(Clone)]
pub struct GaussLinearModel {
    pub grid: GridSpec,
    pub forward: ForwardBuilder,
    pub noise: NoisePrecision,
    pub prior_mean: Vec<f64>,
    pub log_prior_eta: EtaLogPrior,
    pub log_prior_theta: ThetaLogPrior,
    pub dense_cap: usize,
}

impl fmt::Debug for GaussLinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussLinearModel")
            .field("grid", &self.grid)
            .field("noise", &self.noise)
            .field("prior_mean_len", &self.prior_mean.len())
            .finish_non_exhaustive()
    }
}

impl GaussLinearModel {
    /// Direct observation (`A = I`), zero prior mean, flat priors.
    pub fn direct(grid: GridSpec, noise: NoisePrecision) -> Self {
        let n = grid.size();
        Self {
            grid,
            forward: Arc::new(move |_| Ok(SparseOperator::identity(n))),
            noise,
            prior_mean: vec![0.0; n],
            log_prior_eta: Arc::new(|_| 0.0),
            log_prior_theta: Arc::new(|_| 0.0),
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }

    pub fn with_forward(mut self, op: SparseOperator) -> Self {
        self.forward = Arc::new(move |_| Ok(op.clone()));
        self
    }

    pub fn with_prior_mean(mut self, mean: Vec<f64>) -> Result<Self> {
        if mean.len() != self.grid.size() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.size(),
                actual: mean.len(),
            });
        }
        self.prior_mean = mean;
        Ok(self)
    }

    /// `A(θ)`, checked against the grid and the noise dimension.
    pub fn forward_at(&self, theta: &[f64], y_len: usize) -> Result<SparseOperator> {
        let a = (self.forward)(theta)?;
        if a.cols() != self.grid.size() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.size(),
                actual: a.cols(),
            });
        }
        if a.rows() != y_len {
            return Err(Error::DimensionMismatch {
                expected: y_len,
                actual: a.rows(),
            });
        }
        self.noise.check(y_len)?;
        Ok(a)
    }
}

fn check_len(v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: v.len(),
        });
    }
    Ok(())
}

/// `−log p(x)` for `x ~ N(0, Q⁻¹)` with an injected log-determinant.
pub fn neg_loglik_with_precision<F>(x: &[f64], q: &CsrMatrix, mut logdet_fn: F) -> Result<f64>
where
    F: FnMut(&CsrMatrix) -> Result<f64>,
{
    check_len(x, q.n())?;
    let n = q.n() as f64;
    let qx = q.matvec(x)?;
    Ok(-0.5 * logdet_fn(q)? + 0.5 * dot(x, &qx) + 0.5 * n * (2.0 * PI).ln())
}

/// `−log p(x | κ, τ)` for the zero-mean SPDE field on `grid`.
pub fn gmrf_neg_loglik<F>(x: &[f64], h: &Hyperparams, grid: &GridSpec, logdet_fn: F) -> Result<f64>
where
    F: FnMut(&CsrMatrix) -> Result<f64>,
{
    check_len(x, grid.size())?;
    let q = build_precision(grid, h)?;
    neg_loglik_with_precision(x, &q, logdet_fn)
}

/// `Φ(η, θ) = ½ rᵀQ₁r − ½ log det Q₁ + ½ (x−μ)ᵀQ_x(x−μ) − ½ log det Q_x
/// − log p(η) − log p(θ) + ((m+n)/2) log 2π`, `r = y − A(θ)x`.
pub fn gauss_linear_objective<F>(
    model: &GaussLinearModel,
    x: &[f64],
    y: &[f64],
    eta: &Hyperparams,
    theta: &[f64],
    mut logdet_fn: F,
) -> Result<f64>
where
    F: FnMut(&CsrMatrix) -> Result<f64>,
{
    let n = model.grid.size();
    check_len(x, n)?;
    let a = model.forward_at(theta, y.len())?;
    let ax = a.apply(x)?;
    let r: Vec<f64> = y.iter().zip(&ax).map(|(yi, ai)| yi - ai).collect();
    let data = 0.5 * dot(&r, &model.noise.apply(&r)?)
        - 0.5 * model.noise.logdet(y.len(), model.dense_cap)?;
    let qx = build_precision(&model.grid, eta)?;
    let d: Vec<f64> = x.iter().zip(&model.prior_mean).map(|(a, b)| a - b).collect();
    let prior = 0.5 * dot(&d, &qx.matvec(&d)?) - 0.5 * logdet_fn(&qx)?;
    let constant = 0.5 * (n + y.len()) as f64 * (2.0 * PI).ln();
    Ok(data + prior - (model.log_prior_eta)(eta) - (model.log_prior_theta)(theta) + constant)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub precision: CsrMatrix,
    pub mean: Vec<f64>,
    pub iterations: usize,
}

/// `AᵀQ₁A` as a symmetric sparse matrix.
fn normal_operator(a: &SparseOperator, noise: &NoisePrecision) -> Result<CsrMatrix> {
    // rows of Q₁A
    let q1a: Vec<Vec<(usize, f64)>> = match noise {
        NoisePrecision::Scalar(q) => (0..a.rows()).map(|i| a.row(i).map(|(j, v)| (j, q * v)).collect()).collect(),
        NoisePrecision::Matrix(q1) => (0..a.rows())
            .map(|i| {
                let mut acc: HashMap<usize, f64> = HashMap::new();
                let (cols, vals) = q1.row(i);
                for (&k, &w) in cols.iter().zip(vals) {
                    for (j, v) in a.row(k) {
                        *acc.entry(j).or_default() += w * v;
                    }
                }
                let mut row: Vec<_> = acc.into_iter().collect();
                row.sort_by_key(|&(j, _)| j);
                row
            })
            .collect(),
    };
    let mut triplets = Vec::new();
    for (i, row) in q1a.iter().enumerate() {
        for (j, aij) in a.row(i) {
            for &(l, m) in row {
                let v = 0.5 * aij * m;
                triplets.push((j, l, v));
                triplets.push((l, j, v));
            }
        }
    }
    let n = a.cols();
    // keep the diagonal present so the result validates as SPD-patterned
    triplets.extend((0..n).map(|i| (i, i, 0.0)));
    CsrMatrix::from_triplets(n, &triplets)
}

/// Posterior precision `Q_p = Q_x + AᵀQ₁A` and mean solving
/// `Q_p μ_p = Q_x μ + AᵀQ₁y` by CG.
pub fn posterior_mode(
    model: &GaussLinearModel,
    y: &[f64],
    eta: &Hyperparams,
    theta: &[f64],
    cfg: &SolverConfig,
) -> Result<Posterior> {
    let a = model.forward_at(theta, y.len())?;
    let qx = build_precision(&model.grid, eta)?;
    let precision = qx.add(&normal_operator(&a, &model.noise)?)?;
    let mut rhs = qx.matvec(&model.prior_mean)?;
    for (r, v) in rhs.iter_mut().zip(a.apply_transpose(&model.noise.apply(y)?)?) {
        *r += v;
    }
    let sol = cg_solve(&precision, &rhs, cfg)?;
    Ok(Posterior {
        precision,
        mean: sol.x,
        iterations: sol.iterations,
    })
}

/// Draw `x ~ N(0, Q⁻¹)` as `L⁻ᵀz` from a dense Cholesky factor.
pub fn sample_gmrf_dense(q: &CsrMatrix, seed: u64, cap: usize) -> Result<Vec<f64>> {
    let chol = DenseCholesky::factor(q, cap)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: Vec<f64> = (0..q.n()).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(chol.sample_from_precision(&z))
}

/// One step of a colouring-escalation plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub k: usize,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub phases: Vec<Phase>,
}

impl Schedule {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        if phases.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one phase".into()));
        }
        if phases.iter().any(|p| p.k == 0 || p.max_iter == 0) {
            return Err(Error::InvalidArgument("phase k and iteration budget must be >= 1".into()));
        }
        if phases.windows(2).any(|w| w[1].k < w[0].k) {
            return Err(Error::InvalidArgument("schedule distances must be ascending".into()));
        }
        Ok(Self { phases })
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            phases: vec![
                Phase { k: 2, max_iter: 20 },
                Phase { k: 4, max_iter: 10 },
                Phase { k: 6, max_iter: 10 },
            ],
        }
    }
}

/// `"2:20,4:10,6:10"`: distance `k` and iteration budget per phase.
impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad schedule {s:?}, expected k:iters,..."));
        let phases = s
            .split(',')
            .map(|part| {
                let (k, it) = part.trim().split_once(':').ok_or_else(bad)?;
                Ok(Phase {
                    k: k.trim().parse().map_err(|_| bad())?,
                    max_iter: it.trim().parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Schedule::new(phases)
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.phases.iter().map(|p| format!("{}:{}", p.k, p.max_iter)).collect();
        write!(f, "{}", parts.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FitBackend {
    /// Dense Cholesky log-determinant; the schedule's distances are ignored
    /// and the budgets are pooled into one phase.
    Exact,
    Probing { mode: ProbingMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub schedule: Schedule,
    pub backend: FitBackend,
    pub solver: SolverConfig,
    pub seed: u64,
    /// Central-difference step in `(log κ, log τ)`.
    pub fd_step: f64,
    pub phase_grad_tol: f64,
    pub final_grad_tol: f64,
    pub armijo_c: f64,
    pub max_backtracks: usize,
    /// Hessian eigenvalues are floored at this fraction of the largest one.
    pub hessian_floor: f64,
    /// Longest Newton step in log-parameter space.
    pub max_step: f64,
    pub order: Option<usize>,
    pub dense_cap: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            backend: FitBackend::Probing {
                mode: ProbingMode::Signed,
            },
            solver: SolverConfig::default(),
            seed: 0,
            fd_step: 1e-4,
            phase_grad_tol: 1e-4,
            final_grad_tol: 1e-5,
            armijo_c: 1e-4,
            max_backtracks: 40,
            hessian_floor: 1e-6,
            max_step: 1.0,
            order: None,
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    BudgetExhausted,
    /// No Armijo step found; the gradient is at the evaluation noise floor.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phase: usize,
    pub k: Option<usize>,
    pub iteration: usize,
    pub kappa: f64,
    pub tau: f64,
    pub value: f64,
    pub grad_norm: f64,
    /// Step length `t` of the step that produced this iterate (0 at a
    /// phase start).
    pub step_length: f64,
    pub backtracks: usize,
    /// Estimator work since the previous entry.
    pub stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: usize,
    pub k: Option<usize>,
    pub kappa: f64,
    pub tau: f64,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub num_vectors: usize,
    pub quadrature_order: Option<usize>,
    pub fixed_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub iterates: Vec<TraceEntry>,
    pub phases: Vec<PhaseSummary>,
    pub termination: Option<Termination>,
}

impl OptimizerTrace {
    /// Objective values never increase within a phase (the objective itself
    /// changes between phases).
    pub fn is_monotone(&self) -> bool {
        self.iterates
            .windows(2)
            .filter(|w| w[0].phase == w[1].phase)
            .all(|w| w[1].value <= w[0].value)
    }
}

/// A Probing rule is rebuilt when `κ` leaves `[κ₀/RECENTER, RECENTER·κ₀]`;
/// it stays valid on the wider `[κ₀/COVER, COVER·κ₀]` so line-search trials
/// (at most `e^max_step` away) remain inside.
const RECENTER: f64 = 2.0;
const COVER: f64 = 8.0;

struct ProbingState {
    coloring: Coloring,
    mode: ProbingMode,
    seed: u64,
    center: f64,
    rule: Option<QuadratureRule>,
    solver: SolverConfig,
}

/// `Φ(log κ, log τ)` for one phase, using
/// `log det Q(κ, τ) = log det Q(κ, 1) + 2n log τ` so the estimator only runs
/// once per distinct `κ`.
struct PhaseObjective<'a> {
    x: &'a [f64],
    grid: &'a GridSpec,
    cfg: &'a FitConfig,
    probing: Option<ProbingState>,
    cache: HashMap<u64, (f64, f64)>,
    stats: SolveStats,
}

impl<'a> PhaseObjective<'a> {
    fn new(x: &'a [f64], grid: &'a GridSpec, cfg: &'a FitConfig, k: Option<usize>, seed: u64) -> Result<Self> {
        let probing = match (cfg.backend, k) {
            (FitBackend::Probing { mode }, Some(k)) => {
                let graph = AdjacencyGraph::from_matrix(&build_precision(grid, &Hyperparams::new(1.0, 1.0)?)?);
                Some(ProbingState {
                    coloring: color_distance_k(&graph, k)?,
                    mode,
                    seed,
                    center: f64::NAN,
                    rule: None,
                    solver: cfg.solver,
                })
            }
            _ => None,
        };
        Ok(Self {
            x,
            grid,
            cfg,
            probing,
            cache: HashMap::new(),
            stats: SolveStats::default(),
        })
    }

    fn unit_precision(&self, kappa: f64) -> Result<CsrMatrix> {
        build_precision(self.grid, &Hyperparams::new(kappa, 1.0)?)
    }

    /// Fix rule and iteration count around `kappa` unless it is still
    /// inside the current window.
    fn recenter(&mut self, kappa: f64) -> Result<()> {
        let Some(state) = self.probing.as_ref() else {
            return Ok(());
        };
        if state.rule.is_some() && kappa >= state.center / RECENTER && kappa <= state.center * RECENTER {
            return Ok(());
        }
        let lo = precision_spectral_bounds(self.grid, &Hyperparams::new(kappa / COVER, 1.0)?)?;
        let hi = precision_spectral_bounds(self.grid, &Hyperparams::new(kappa * COVER, 1.0)?)?;
        let bounds = SpectralBounds::new(lo.lambda_min, hi.lambda_max)?;
        let order = match self.cfg.order {
            Some(order) => order,
            None => choose_order(bounds, 0.1 * self.cfg.solver.rel_tol)?,
        };
        let rule = build_log_quadrature(bounds, order)?;
        // adaptive pass at the hardest point of the window sets the count
        let q = self.unit_precision(kappa / RECENTER)?;
        let adaptive = SolverConfig {
            fixed_iterations: None,
            ..self.cfg.solver
        };
        let probe = logdet_probing(&q, &state.coloring, &rule, &adaptive, state.mode, state.seed)?;
        self.stats += probe.stats;
        let fixed = probe.stats.max_seed_iterations + probe.stats.max_seed_iterations / 10 + 5;
        let state = self.probing.as_mut().unwrap();
        state.center = kappa;
        state.rule = Some(rule);
        state.solver = SolverConfig {
            fixed_iterations: Some(fixed),
            ..self.cfg.solver
        };
        self.cache.clear();
        Ok(())
    }

    /// `(log det Q(κ,1), xᵀQ(κ,1)x)`.
    fn terms(&mut self, kappa: f64) -> Result<(f64, f64)> {
        if let Some(&hit) = self.cache.get(&kappa.to_bits()) {
            return Ok(hit);
        }
        let q = self.unit_precision(kappa)?;
        let logdet = match &self.probing {
            None => logdet_exact_dense(&q, self.cfg.dense_cap)?,
            Some(state) => {
                let rule = state.rule.as_ref().expect("recenter before evaluating");
                let est = logdet_probing(&q, &state.coloring, rule, &state.solver, state.mode, state.seed)?;
                self.stats += est.stats;
                est.value
            }
        };
        let quad = dot(self.x, &q.matvec(self.x)?);
        self.cache.insert(kappa.to_bits(), (logdet, quad));
        Ok((logdet, quad))
    }

    fn value(&mut self, p: [f64; 2]) -> Result<f64> {
        let n = self.x.len() as f64;
        let (logdet, quad) = self.terms(p[0].exp())?;
        let tau2 = (2.0 * p[1]).exp();
        Ok(-0.5 * (logdet + 2.0 * n * p[1]) + 0.5 * tau2 * quad + 0.5 * n * (2.0 * PI).ln())
    }

    /// Trial evaluation for the line search: an estimator that fails to
    /// converge far from the centre just rejects the step.
    fn trial(&mut self, p: [f64; 2]) -> Result<f64> {
        match self.value(p) {
            Err(Error::ProbingVector { .. }) | Err(Error::InvalidArgument(_)) => Ok(f64::INFINITY),
            other => other,
        }
    }

    /// Central-difference gradient and Hessian.
    fn derivatives(&mut self, p: [f64; 2], f0: f64) -> Result<([f64; 2], [[f64; 2]; 2])> {
        let h = self.cfg.fd_step;
        let at = |s: &mut Self, da: f64, db: f64| s.value([p[0] + da, p[1] + db]);
        let (fa_p, fa_m) = (at(self, h, 0.0)?, at(self, -h, 0.0)?);
        let (fb_p, fb_m) = (at(self, 0.0, h)?, at(self, 0.0, -h)?);
        let fpp = at(self, h, h)?;
        let fpm = at(self, h, -h)?;
        let fmp = at(self, -h, h)?;
        let fmm = at(self, -h, -h)?;
        let grad = [(fa_p - fa_m) / (2.0 * h), (fb_p - fb_m) / (2.0 * h)];
        let haa = (fa_p - 2.0 * f0 + fa_m) / (h * h);
        let hbb = (fb_p - 2.0 * f0 + fb_m) / (h * h);
        let hab = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
        Ok((grad, [[haa, hab], [hab, hbb]]))
    }

    fn take_stats(&mut self) -> SolveStats {
        std::mem::take(&mut self.stats)
    }
}

/// Newton direction with the Hessian's eigenvalues replaced by
/// `max(|λ|, floor·max|λ|)`.
fn modified_newton_direction(g: [f64; 2], h: [[f64; 2]; 2], floor: f64) -> [f64; 2] {
    let (a, b, c) = (h[0][0], h[0][1], h[1][1]);
    let mean = 0.5 * (a + c);
    let radius = (0.25 * (a - c).powi(2) + b * b).sqrt();
    let (l1, l2) = (mean + radius, mean - radius);
    // unit eigenvector for l1
    let (vx, vy) = if b.abs() > 1e-300 {
        let (x, y) = (l1 - c, b);
        let norm = x.hypot(y);
        (x / norm, y / norm)
    } else if a >= c {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    let top = l1.abs().max(l2.abs());
    if !(top > 0.0) || !top.is_finite() {
        return [-g[0], -g[1]];
    }
    let m1 = l1.abs().max(floor * top);
    let m2 = l2.abs().max(floor * top);
    // d = −V diag(1/m) Vᵀ g with V = [[vx, −vy], [vy, vx]]
    let c1 = (vx * g[0] + vy * g[1]) / m1;
    let c2 = (-vy * g[0] + vx * g[1]) / m2;
    [-(vx * c1 - vy * c2), -(vy * c1 + vx * c2)]
}

fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

/// Minimise `gmrf_neg_loglik` over `(log κ, log τ)`, escalating the probing
/// distance along the schedule. Each phase freezes its probing seed.
pub fn fit_hyperparams(
    x_obs: &[f64],
    grid: &GridSpec,
    init: Hyperparams,
    cfg: &FitConfig,
) -> Result<(Hyperparams, OptimizerTrace)> {
    check_len(x_obs, grid.size())?;
    init.validate()?;
    cfg.solver.validate()?;
    if !(cfg.fd_step > 0.0) || !(cfg.max_step > 0.0) {
        return Err(Error::InvalidArgument("fd_step and max_step must be positive".into()));
    }
    let phases: Vec<(Option<usize>, usize)> = match cfg.backend {
        FitBackend::Exact => vec![(None, cfg.schedule.phases.iter().map(|p| p.max_iter).sum())],
        FitBackend::Probing { .. } => cfg.schedule.phases.iter().map(|p| (Some(p.k), p.max_iter)).collect(),
    };
    let mut trace = OptimizerTrace::default();
    let mut p = init.to_log();
    let last = phases.len() - 1;
    for (phase, &(k, budget)) in phases.iter().enumerate() {
        let tol = if phase == last { cfg.final_grad_tol } else { cfg.phase_grad_tol };
        let seed = cfg.seed.wrapping_add(phase as u64);
        let result = run_phase(x_obs, grid, cfg, k, seed, budget, tol, phase, &mut p, &mut trace);
        if let Err(e) = result {
            return Err(Error::FitAborted {
                message: e.to_string(),
                trace: Box::new(trace),
            });
        }
    }
    trace.termination = trace.phases.last().map(|s| s.termination);
    Ok((Hyperparams::from_log(p)?, trace))
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    x: &[f64],
    grid: &GridSpec,
    cfg: &FitConfig,
    k: Option<usize>,
    seed: u64,
    budget: usize,
    tol: f64,
    phase: usize,
    p: &mut [f64; 2],
    trace: &mut OptimizerTrace,
) -> Result<()> {
    let mut obj = PhaseObjective::new(x, grid, cfg, k, seed)?;
    obj.recenter(p[0].exp())?;
    let mut f = obj.value(*p)?;
    let (mut step_length, mut backtracks) = (0.0, 0);
    let mut termination = Termination::BudgetExhausted;
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        let (g, h) = obj.derivatives(*p, f)?;
        grad_norm = norm2(g);
        trace.iterates.push(TraceEntry {
            phase,
            k,
            iteration: iterations,
            kappa: p[0].exp(),
            tau: p[1].exp(),
            value: f,
            grad_norm,
            step_length,
            backtracks,
            stats: obj.take_stats(),
        });
        if grad_norm < tol {
            termination = Termination::Converged;
            break;
        }
        if iterations == budget {
            break;
        }
        let mut d = modified_newton_direction(g, h, cfg.hessian_floor);
        let len = norm2(d);
        if len > cfg.max_step {
            d = [d[0] * cfg.max_step / len, d[1] * cfg.max_step / len];
        }
        let slope = g[0] * d[0] + g[1] * d[1];
        let mut t = 1.0;
        backtracks = 0;
        let accepted = loop {
            let trial = [p[0] + t * d[0], p[1] + t * d[1]];
            let ft = obj.trial(trial)?;
            if ft <= f + cfg.armijo_c * t * slope {
                break Some((trial, ft));
            }
            if backtracks == cfg.max_backtracks {
                break None;
            }
            t *= 0.5;
            backtracks += 1;
        };
        let Some((next, _)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        iterations += 1;
        step_length = t;
        *p = next;
        // a new rule shifts the objective slightly, so re-evaluate under it
        obj.recenter(p[0].exp())?;
        f = obj.value(*p)?;
    }
    let (num_vectors, quadrature_order, fixed_iterations) = match &obj.probing {
        Some(s) => (
            s.coloring.num_colors,
            s.rule.as_ref().map(|r| r.order),
            s.solver.fixed_iterations,
        ),
        None => (0, None, None),
    };
    trace.phases.push(PhaseSummary {
        phase,
        k,
        kappa: p[0].exp(),
        tau: p[1].exp(),
        value: f,
        grad_norm,
        iterations,
        termination,
        num_vectors,
        quadrature_order,
        fixed_iterations,
    });
    Ok(())
}
