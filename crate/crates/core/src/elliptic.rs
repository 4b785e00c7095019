//! Complete elliptic integrals and Jacobi elliptic functions.
//!
//! Parameter convention is `m = k²`. Routines that are sensitive near
//! `m = 1` also take the complementary parameter `m1 = 1 − m` so callers can
//! pass it without cancellation.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

const AGM_MAX_STEPS: usize = 64;

/// Arithmetic-geometric mean of two nonnegative numbers.
pub fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..AGM_MAX_STEPS {
        if (a - b).abs() <= f64::EPSILON * a {
            break;
        }
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
    }
    0.5 * (a + b)
}

/// Complete elliptic integral of the first kind `K(m)`, `0 <= m < 1`.
pub fn ellipk(m: f64) -> f64 {
    ellipk_complement(1.0 - m)
}

/// `K` evaluated from the complementary parameter `m1 = 1 − m`.
pub fn ellipk_complement(m1: f64) -> f64 {
    debug_assert!(m1 > 0.0 && m1 <= 1.0, "ellipk needs 0 < m1 <= 1, got {m1}");
    FRAC_PI_2 / agm(1.0, m1.sqrt())
}

/// Jacobi `(sn, cn, dn)(u | m)` for real `u`.
pub fn ellipj(u: f64, m: f64) -> (f64, f64, f64) {
    ellipj_with_complement(u, m, 1.0 - m)
}

/// Jacobi functions by the descending Landen (AGM) scheme, with `m1 = 1 − m`
/// supplied by the caller.
pub fn ellipj_with_complement(u: f64, m: f64, m1: f64) -> (f64, f64, f64) {
    if m <= 0.0 {
        return (u.sin(), u.cos(), 1.0);
    }
    if m1 <= 0.0 {
        let sech = 1.0 / u.cosh();
        return (u.tanh(), sech, sech);
    }
    let mut a = [0.0f64; AGM_MAX_STEPS + 1];
    let mut c = [0.0f64; AGM_MAX_STEPS + 1];
    a[0] = 1.0;
    let mut b = m1.sqrt();
    c[0] = m.sqrt();
    let mut steps = 0;
    while steps < AGM_MAX_STEPS && c[steps].abs() > f64::EPSILON * a[steps] {
        let (an, bn) = (a[steps], b);
        steps += 1;
        a[steps] = 0.5 * (an + bn);
        c[steps] = 0.5 * (an - bn);
        b = (an * bn).sqrt();
    }
    let mut phi = (1u64 << steps) as f64 * a[steps] * u;
    for n in (1..=steps).rev() {
        phi = 0.5 * (phi + (c[n] / a[n] * phi.sin()).asin());
    }
    let (sn, cn) = phi.sin_cos();
    // dn² = 1 − m sn² = m1 + m cn², free of cancellation; dn > 0 on the real line
    let dn = (m1 + m * cn * cn).sqrt();
    (sn, cn, dn)
}

/// Jacobi `(sn, cn, dn)(x + iy | m)` via the addition theorem with the
/// imaginary transformation; `m1 = 1 − m`.
pub fn ellipj_complex(z: Complex64, m: f64, m1: f64) -> (Complex64, Complex64, Complex64) {
    let (s, c, d) = ellipj_with_complement(z.re, m, m1);
    let (s1, c1, d1) = ellipj_with_complement(z.im, m1, m);
    let delta = c1 * c1 + m * s * s * s1 * s1;
    let sn = Complex64::new(s * d1, c * d * s1 * c1) / delta;
    let cn = Complex64::new(c * c1, -s * d * s1 * d1) / delta;
    let dn = Complex64::new(d * c1 * d1, -m * s * c * s1) / delta;
    (sn, cn, dn)
}
