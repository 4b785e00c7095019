//! Rational approximation of the matrix logarithm,
//! `log(Q)v ≈ Re Σ_l α_l (Q − σ_l I)⁻¹ v`, from a midpoint rule on a contour
//! that is conformally mapped to a rectangle by Jacobi elliptic functions.
//!
//! With `z = w²` the Cauchy integral for `log` becomes an integral in the
//! right half `w`-plane around `[√λ_min, √λ_max]`. The Möbius map
//! `w = √(ab)(1 + k u)/(1 − k u)`, `a = √λ_min`, `b = √λ_max`, sends the disk
//! `|u| < 1/k` onto the half plane and `[−1, 1]` onto `[a, b]`; `u = sn(t | k²)`
//! then straightens the annulus between them into a rectangle, where the
//! trapezoid rule converges geometrically. Conjugate symmetry halves the
//! number of shifts.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{agm, ellipj_complex};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Default widening applied to Lanczos eigenvalue estimates.
pub const DEFAULT_MARGIN: f64 = 0.05;
/// Largest order picked by [`choose_order`].
pub const MAX_ORDER: usize = 40;
/// Intervals narrower than this relative width are widened symmetrically
/// (in log scale) so the elliptic modulus stays positive.
const MIN_RELATIVE_WIDTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl SpectralBounds {
    pub fn new(lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spectral bounds need 0 < lambda_min <= lambda_max, got [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(Self {
            lambda_min,
            lambda_max,
        })
    }

    pub fn ratio(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    pub fn contains(&self, lambda: f64) -> bool {
        (self.lambda_min..=self.lambda_max).contains(&lambda)
    }

    /// `n` points spread geometrically over the interval, endpoints included.
    pub fn log_samples(&self, n: usize) -> Vec<f64> {
        let (lo, hi) = (self.lambda_min.ln(), self.lambda_max.ln());
        if n < 2 || hi == lo {
            return vec![self.lambda_min; n.max(1)];
        }
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                (lo + t * (hi - lo)).exp().clamp(self.lambda_min, self.lambda_max)
            })
            .collect()
    }
}

/// Outcome of a Lanczos run: widened bounds plus the raw Ritz extremes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub bounds: SpectralBounds,
    pub ritz_min: f64,
    pub ritz_max: f64,
    pub iterations: usize,
    /// False when the Ritz extremes were still moving by more than the
    /// convergence tolerance at the last iteration. Not fatal.
    pub converged: bool,
}

/// Extremal eigenvalue estimates of an SPD matrix by Lanczos (three-term
/// recurrence, no reorthogonalisation: only extremes are needed and spurious
/// copies do not move them), widened by `margin` on each side. The upper
/// bound is clipped to the Gershgorin bound, which always contains the
/// spectrum.
pub fn estimate_spectral_bounds(q: &CsrMatrix, iters: usize, margin: f64) -> Result<SpectralEstimate> {
    const RITZ_TOL: f64 = 1e-6;
    if iters < 10 {
        return Err(Error::InvalidArgument(format!("Lanczos needs iters >= 10, got {iters}")));
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
    }
    let n = q.n();
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2c_2005);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let norm = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut v_prev = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut alphas = Vec::with_capacity(iters);
    let mut betas: Vec<f64> = Vec::with_capacity(iters);
    let mut beta_prev = 0.0;
    let (mut lo, mut hi) = (f64::NAN, f64::NAN);
    let mut converged = false;
    let mut steps = 0;

    for step in 0..iters.min(n) {
        steps = step + 1;
        q.matvec_into(&v, &mut w);
        let alpha = dot(&w, &v);
        for i in 0..n {
            w[i] -= alpha * v[i] + beta_prev * v_prev[i];
        }
        let beta = dot(&w, &w).sqrt();
        alphas.push(alpha);
        let (new_lo, new_hi) = tridiagonal_extremes(&alphas, &betas);
        let moved = ((new_lo - lo).abs() / new_lo.abs()).max((new_hi - hi).abs() / new_hi.abs());
        lo = new_lo;
        hi = new_hi;
        if beta <= 1e-12 * alpha.abs().max(1.0) {
            // invariant subspace: the Ritz values are exact eigenvalues
            converged = true;
            break;
        }
        if step >= 10 && moved < RITZ_TOL {
            converged = true;
            break;
        }
        betas.push(beta);
        std::mem::swap(&mut v_prev, &mut v);
        for i in 0..n {
            v[i] = w[i] / beta;
        }
        beta_prev = beta;
    }
    if steps == n {
        converged = true;
    }
    if !(lo > 0.0) {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: lo });
    }
    let gershgorin = (0..n)
        .map(|i| q.row(i).1.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let lambda_max = (hi * (1.0 + margin)).min(gershgorin).max(hi);
    let lambda_min = lo / (1.0 + margin);
    Ok(SpectralEstimate {
        bounds: SpectralBounds::new(lambda_min, lambda_max)?,
        ritz_min: lo,
        ritz_max: hi,
        iterations: steps,
        converged,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest and largest eigenvalue of the symmetric tridiagonal matrix with
/// diagonal `alphas` and off-diagonal `betas`, by Sturm-sequence bisection.
fn tridiagonal_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let m = alphas.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..m {
        let off = betas.get(i).map_or(0.0, |b| b.abs())
            + if i > 0 { betas[i - 1].abs() } else { 0.0 };
        lo = lo.min(alphas[i] - off);
        hi = hi.max(alphas[i] + off);
    }
    // number of eigenvalues strictly below x
    let count_below = |x: f64| {
        let mut count = 0;
        let mut d = 1.0;
        for i in 0..m {
            let b2 = if i > 0 { betas[i - 1] * betas[i - 1] } else { 0.0 };
            d = alphas[i] - x - if i > 0 { b2 / d } else { 0.0 };
            if d == 0.0 {
                d = -f64::EPSILON * (alphas[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
            }
            if d < 0.0 {
                count += 1;
            }
        }
        count
    };
    let bisect = |target: usize| {
        // smallest x with count_below(x) >= target, i.e. the target-th eigenvalue
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if count_below(mid) >= target {
                b = mid;
            } else {
                a = mid;
            }
        }
        0.5 * (a + b)
    };
    (bisect(1), bisect(m))
}

/// Weights and shifts of the rational approximation to `log`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub order: usize,
    pub weights: Vec<Complex64>,
    pub shifts: Vec<Complex64>,
    pub bounds: SpectralBounds,
    /// Elliptic modulus of the conformal map.
    pub modulus: f64,
    /// Complete elliptic integrals `K(k)` and `K'(k)`.
    pub quarter_periods: (f64, f64),
}

impl QuadratureRule {
    /// Asymptotic error reduction per additional node,
    /// `exp(−π K' / (2K))`.
    pub fn rate_per_node(&self) -> f64 {
        let (k, kp) = self.quarter_periods;
        (-PI * kp / (2.0 * k)).exp()
    }

    /// `Σ α_l / (λ − σ_l)`; the real part approximates `log λ`.
    pub fn scalar_apply_complex(&self, lambda: f64) -> Complex64 {
        self.weights
            .iter()
            .zip(&self.shifts)
            .map(|(&a, &s)| a / (lambda - s))
            .sum()
    }

    /// The rule as `2N` conjugate-closed pairs `(α/2, σ)`, `(ᾱ/2, σ̄)`. Its
    /// resolvent sum is real for real `λ` and equals [`Self::scalar_apply`];
    /// solvers only need the `N` upper shifts since `(Q − σ̄)⁻¹v` is the
    /// conjugate of `(Q − σ)⁻¹v` for real `Q` and `v`.
    pub fn conjugate_closed(&self) -> Vec<(Complex64, Complex64)> {
        self.weights
            .iter()
            .zip(&self.shifts)
            .flat_map(|(&a, &s)| [(0.5 * a, s), (0.5 * a.conj(), s.conj())])
            .collect()
    }

    pub fn scalar_apply(&self, lambda: f64) -> f64 {
        self.scalar_apply_complex(lambda).re
    }

    /// Largest `|f_N(λ) − log λ|` over `samples` points spread geometrically
    /// over the bounds.
    pub fn max_scalar_error(&self, samples: usize) -> f64 {
        self.bounds
            .log_samples(samples)
            .into_iter()
            .map(|l| (self.scalar_apply(l) - l.ln()).abs())
            .fold(0.0, f64::max)
    }
}

/// Builds the `order`-point rule for `log` on `bounds`.
pub fn build_log_quadrature(bounds: SpectralBounds, order: usize) -> Result<QuadratureRule> {
    if order < 2 {
        return Err(Error::InvalidArgument(format!("quadrature order must be >= 2, got {order}")));
    }
    let SpectralBounds {
        mut lambda_min,
        mut lambda_max,
    } = bounds;
    if lambda_max / lambda_min < 1.0 + MIN_RELATIVE_WIDTH {
        let mid = (lambda_min * lambda_max).sqrt();
        let half = (1.0 + MIN_RELATIVE_WIDTH).sqrt();
        lambda_min = mid / half;
        lambda_max = mid * half;
    }
    let ratio = lambda_max / lambda_min;
    // q = (b/a)^{1/2} in the w-plane, i.e. (λmax/λmin)^{1/4}
    let q = ratio.sqrt().sqrt();
    let k = (q - 1.0) / (q + 1.0);
    let m = k * k;
    let m1 = 4.0 * q / ((q + 1.0) * (q + 1.0));
    if !ratio.is_finite() || !(k > 0.0) || !(m1 > f64::MIN_POSITIVE) || !(m1 <= 1.0) {
        return Err(Error::EllipticParameter { ratio });
    }
    let big_k = PI / (2.0 * agm(1.0, m1.sqrt()));
    let big_kp = PI / (2.0 * agm(1.0, k));
    if !(big_k.is_finite() && big_kp.is_finite()) {
        return Err(Error::EllipticParameter { ratio });
    }

    let centre = (lambda_min * lambda_max).sqrt().sqrt();
    let scale = Complex64::new(0.0, -4.0 * big_k / (PI * order as f64));
    let mut weights = Vec::with_capacity(order);
    let mut shifts = Vec::with_capacity(order);
    for j in 0..order {
        let t = Complex64::new(
            -big_k + (j as f64 + 0.5) * 2.0 * big_k / order as f64,
            0.5 * big_kp,
        );
        let (sn, cn, dn) = ellipj_complex(t, m, m1);
        let denom = 1.0 - k * sn;
        let w = centre * (1.0 + k * sn) / denom;
        let dw_dt = centre * 2.0 * k * cn * dn / (denom * denom);
        let sigma = w * w;
        // log(w²) = 2 log w on the principal branch, since Re w > 0
        weights.push(scale * 2.0 * w.ln() * w * dw_dt);
        shifts.push(sigma);
    }
    Ok(QuadratureRule {
        order,
        weights,
        shifts,
        bounds,
        modulus: k,
        quarter_periods: (big_k, big_kp),
    })
}

/// Smallest order in `2..=MAX_ORDER` whose sampled scalar error on `bounds`
/// is below `target`; `MAX_ORDER` if none is.
pub fn choose_order(bounds: SpectralBounds, target: f64) -> Result<usize> {
    for order in 2..=MAX_ORDER {
        if build_log_quadrature(bounds, order)?.max_scalar_error(256) < target {
            return Ok(order);
        }
    }
    Ok(MAX_ORDER)
}
