//! Conjugate gradients for `Qx = b` and the multi-shift variant that solves
//! `(Q − σ_l I)x_l = b` for every shift from the one real Krylov sequence of
//! the seed system.
//!
//! Shifted residuals stay collinear with the seed residual,
//! `r_l = ζ_l r`, because `K_k(Q, b) = K_k(Q − σI, b)`. The `ζ_l` and the
//! shifted step lengths follow from scalar recurrences, so each extra shift
//! costs two complex AXPYs per iteration and no matrix-vector products.
//! Complex shifts need no change to the recurrences: with a real seed the
//! bilinear form `xᵀy` of COCG coincides with the CG inner product.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::QuadratureRule;
use crate::sparse::CsrMatrix;

/// Denominators of the ζ recurrence below this magnitude count as breakdown.
const BREAKDOWN: f64 = 1e-300;
/// In fixed-iteration mode a shift still freezes once its residual reaches
/// roundoff, before ζ can underflow.
const ROUNDOFF_FREEZE: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Run the multi-shift solve for exactly this many seed iterations
    /// instead of stopping at `rel_tol` (which is then only checked at the
    /// end). The result becomes a smooth function of the matrix entries,
    /// which finite differences need.
    #[serde(default)]
    pub fixed_iterations: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-3,
            max_iter: 10_000,
            fixed_iterations: None,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rel_tol must lie in (0, 1), got {}",
                self.rel_tol
            )));
        }
        if self.max_iter == 0 || self.fixed_iterations == Some(0) {
            return Err(Error::InvalidArgument("iteration limits must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖b − Qx‖ / ‖b‖` from the recurrence.
    pub rel_residual: f64,
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_rhs(q: &CsrMatrix, b: &[f64]) -> Result<()> {
    if b.len() != q.n() {
        return Err(Error::DimensionMismatch {
            expected: q.n(),
            actual: b.len(),
        });
    }
    Ok(())
}

/// Plain (unpreconditioned) conjugate gradients.
pub fn cg_solve(q: &CsrMatrix, b: &[f64], cfg: &SolverConfig) -> Result<CgSolution> {
    cfg.validate()?;
    check_rhs(q, b)?;
    let n = q.n();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let target = cfg.rel_tol * b_norm;
    for it in 1..=cfg.max_iter {
        q.matvec_into(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() <= target {
            return Ok(CgSolution {
                x,
                iterations: it,
                rel_residual: rr_new.sqrt() / b_norm,
            });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        residual: rr.sqrt() / b_norm,
        best: x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolveStats {
    /// Iterations of the seed CG, equal to the matvecs it performed.
    pub seed_iterations: usize,
    pub seed_matvecs: usize,
    /// Complex matvecs spent checking the true shifted residuals.
    pub verification_matvecs: usize,
    /// Largest seed iteration count of a single solve.
    pub max_seed_iterations: usize,
}

impl std::ops::AddAssign for SolveStats {
    fn add_assign(&mut self, rhs: Self) {
        self.max_seed_iterations = self.max_seed_iterations.max(rhs.max_seed_iterations);
        self.seed_iterations += rhs.seed_iterations;
        self.seed_matvecs += rhs.seed_matvecs;
        self.verification_matvecs += rhs.verification_matvecs;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedSolveResult {
    pub solutions: Vec<Vec<Complex64>>,
    /// Relative residual per shift: the ζ-scaled estimate while iterating,
    /// replaced by the true residual `‖b − (Q − σI)x‖/‖b‖` at the end.
    pub residuals: Vec<f64>,
    pub converged: Vec<bool>,
    pub stats: SolveStats,
}

impl ShiftedSolveResult {
    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// Per-iteration snapshot handed to an observer.
#[derive(Debug)]
pub struct IterationRecord<'a> {
    pub iteration: usize,
    /// Seed residual `r_k` after this iteration.
    pub seed_residual: &'a [f64],
    /// `ζ_l` such that the shifted residual is `ζ_l r_k`.
    pub zetas: &'a [Complex64],
    pub solutions: &'a [&'a [Complex64]],
    pub active_shifts: usize,
    /// Per-shift flag; frozen shifts keep their last `x` and `ζ`.
    pub active: &'a [bool],
}

struct ShiftState {
    /// `s = −σ`, so the system reads `(Q + sI)x = b`.
    shift: Complex64,
    x: Vec<Complex64>,
    p: Vec<Complex64>,
    zeta: Complex64,
    zeta_prev: Complex64,
    active: bool,
    broke_down: bool,
}

/// Multi-shift CG (COCG-M for complex shifts) for `(Q − σ_l I) x_l = b`.
///
/// Never fails for non-convergence: unconverged shifts are flagged in the
/// result.
pub fn cocg_m_solve(
    q: &CsrMatrix,
    b: &[f64],
    shifts: &[Complex64],
    cfg: &SolverConfig,
) -> Result<ShiftedSolveResult> {
    cocg_m_solve_observed(q, b, shifts, cfg, |_| {})
}

/// [`cocg_m_solve`] with a callback after every seed iteration.
pub fn cocg_m_solve_observed<F>(
    q: &CsrMatrix,
    b: &[f64],
    shifts: &[Complex64],
    cfg: &SolverConfig,
    mut observe: F,
) -> Result<ShiftedSolveResult>
where
    F: FnMut(&IterationRecord<'_>),
{
    cfg.validate()?;
    check_rhs(q, b)?;
    let n = q.n();
    let b_norm = dot(b, b).sqrt();
    let mut stats = SolveStats::default();
    if b_norm == 0.0 {
        return Ok(ShiftedSolveResult {
            solutions: vec![vec![Complex64::new(0.0, 0.0); n]; shifts.len()],
            residuals: vec![0.0; shifts.len()],
            converged: vec![true; shifts.len()],
            stats,
        });
    }
    let (limit, freeze) = match cfg.fixed_iterations {
        Some(fixed) => (fixed, ROUNDOFF_FREEZE * b_norm),
        None => (cfg.max_iter, cfg.rel_tol * b_norm),
    };
    let b_complex: Vec<Complex64> = b.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut states: Vec<ShiftState> = shifts
        .iter()
        .map(|&sigma| ShiftState {
            shift: -sigma,
            x: vec![Complex64::new(0.0, 0.0); n],
            p: b_complex.clone(),
            zeta: Complex64::new(1.0, 0.0),
            zeta_prev: Complex64::new(1.0, 0.0),
            active: true,
            broke_down: false,
        })
        .collect();
    drop(b_complex);

    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut alpha_prev = 1.0;
    let mut beta_prev = 0.0;
    let mut zetas: Vec<Complex64> = vec![Complex64::new(1.0, 0.0); shifts.len()];

    let mut iteration = 0;
    while iteration < limit && states.iter().any(|s| s.active) {
        iteration += 1;
        q.matvec_into(&p, &mut ap);
        stats.seed_matvecs += 1;
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        let r_norm = rr_new.sqrt();

        for (state, zeta_out) in states.iter_mut().zip(zetas.iter_mut()) {
            if !state.active {
                continue;
            }
            let (z, z_prev) = (state.zeta, state.zeta_prev);
            let denom = alpha * beta_prev * (z_prev - z) + z_prev * alpha_prev * (1.0 + state.shift * alpha);
            if denom.norm() < BREAKDOWN {
                state.active = false;
                state.broke_down = true;
                continue;
            }
            let z_next = z * z_prev * alpha_prev / denom;
            let ratio = z_next / z;
            let alpha_s = alpha * ratio;
            let beta_s = beta * ratio * ratio;
            for ((x, pv), &ri) in state.x.iter_mut().zip(state.p.iter_mut()).zip(&r) {
                *x += alpha_s * *pv;
                *pv = z_next * ri + beta_s * *pv;
            }
            state.zeta_prev = z;
            state.zeta = z_next;
            *zeta_out = z_next;
            if z_next.norm() * r_norm <= freeze {
                state.active = false;
            }
        }

        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        alpha_prev = alpha;
        beta_prev = beta;
        rr = rr_new;

        let active: Vec<bool> = states.iter().map(|s| s.active).collect();
        let active_shifts = active.iter().filter(|&&a| a).count();
        let solutions: Vec<&[Complex64]> = states.iter().map(|s| s.x.as_slice()).collect();
        observe(&IterationRecord {
            iteration,
            seed_residual: &r,
            zetas: &zetas,
            solutions: &solutions,
            active_shifts,
            active: &active,
        });
        if rr_new == 0.0 {
            break;
        }
    }
    stats.seed_iterations = iteration;
    stats.max_seed_iterations = iteration;

    // true residuals: b − (Q − σ)x = b − Q Re x − i Q Im x + σ x
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    let mut q_re = vec![0.0; n];
    let mut q_im = vec![0.0; n];
    let mut residuals = Vec::with_capacity(states.len());
    let mut converged = Vec::with_capacity(states.len());
    let mut solutions = Vec::with_capacity(states.len());
    for state in states {
        for (i, x) in state.x.iter().enumerate() {
            re[i] = x.re;
            im[i] = x.im;
        }
        q.matvec_into(&re, &mut q_re);
        q.matvec_into(&im, &mut q_im);
        stats.verification_matvecs += 1;
        let sigma = -state.shift;
        let res2: f64 = (0..n)
            .map(|i| {
                let qx = Complex64::new(q_re[i], q_im[i]);
                (b[i] - qx + sigma * state.x[i]).norm_sqr()
            })
            .sum();
        let rel = res2.sqrt() / b_norm;
        residuals.push(rel);
        converged.push(!state.broke_down && rel <= cfg.rel_tol);
        solutions.push(state.x);
    }
    Ok(ShiftedSolveResult {
        solutions,
        residuals,
        converged,
        stats,
    })
}

/// Result of one `log(Q)v` application.
#[derive(Debug, Clone, PartialEq)]
pub struct LogApplication {
    pub value: Vec<f64>,
    pub stats: SolveStats,
}

/// `log(Q)v ≈ Re Σ α_l (Q − σ_l I)⁻¹ v` with all resolvents from one
/// multi-shift solve.
pub fn apply_log(
    q: &CsrMatrix,
    v: &[f64],
    rule: &QuadratureRule,
    cfg: &SolverConfig,
) -> Result<LogApplication> {
    let solve = cocg_m_solve(q, v, &rule.shifts, cfg)?;
    if !solve.all_converged() {
        return Err(Error::ShiftsNotConverged {
            failed: solve.converged.iter().filter(|&&c| !c).count(),
            total: rule.shifts.len(),
            iterations: solve.stats.seed_iterations,
        });
    }
    let mut value = vec![0.0; q.n()];
    for (alpha, x) in rule.weights.iter().zip(&solve.solutions) {
        for (out, xi) in value.iter_mut().zip(x) {
            *out += (alpha * xi).re;
        }
    }
    Ok(LogApplication {
        value,
        stats: solve.stats,
    })
}
