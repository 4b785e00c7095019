//! Small dense kernels backing the desk-scale exact path: Cholesky
//! factorisation, triangular solves and Gaussian sampling from a precision.

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Default size limit for dense factorisations.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`, stored row-major.
#[derive(Debug, Clone)]
pub struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    pub fn factor(a: &CsrMatrix, cap: usize) -> Result<Self> {
        let n = a.n();
        if n > cap {
            return Err(Error::DenseCapExceeded { n, cap });
        }
        Self::factor_dense(n, a.to_dense())
    }

    /// Factors a row-major symmetric matrix in place (only the lower triangle
    /// is read).
    pub fn factor_dense(n: usize, mut l: Vec<f64>) -> Result<Self> {
        assert_eq!(l.len(), n * n);
        for j in 0..n {
            let row_j = &l[j * n..j * n + j];
            let d = l[j * n + j] - row_j.iter().map(|v| v * v).sum::<f64>();
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j, value: d });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            let (above, below) = l.split_at_mut((j + 1) * n);
            let row_j = &above[j * n..j * n + j];
            for row_i in below.chunks_exact_mut(n) {
                let s: f64 = row_i[..j].iter().zip(row_j).map(|(a, b)| a * b).sum();
                row_i[j] = (row_i[j] - s) / djj;
            }
        }
        // clear the strict upper triangle
        for i in 0..n {
            for j in (i + 1)..n {
                l[i * n + j] = 0.0;
            }
        }
        Ok(Self { n, l })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn factor_entry(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.n + j]
    }

    /// `log det A = Σ 2 log l_jj`.
    pub fn logdet(&self) -> f64 {
        (0..self.n).map(|j| 2.0 * self.l[j * self.n + j].ln()).sum()
    }

    /// Solves `L y = b`.
    pub fn solve_lower(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(l, y)| l * y).sum();
            y[i] = (y[i] - s) / self.l[i * n + i];
        }
        y
    }

    /// Solves `Lᵀ x = b`.
    pub fn solve_upper(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            x[i] /= self.l[i * n + i];
            let xi = x[i];
            for k in 0..i {
                x[k] -= self.l[i * n + k] * xi;
            }
        }
        x
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// Maps standard normal `z` to a draw from `N(0, A⁻¹)` via `x = L⁻ᵀ z`.
    pub fn sample_from_precision(&self, z: &[f64]) -> Vec<f64> {
        self.solve_upper(z)
    }
}

/// Exact `log det A` through a dense Cholesky factorisation.
pub fn logdet_cholesky(a: &CsrMatrix, cap: usize) -> Result<f64> {
    Ok(DenseCholesky::factor(a, cap)?.logdet())
}
