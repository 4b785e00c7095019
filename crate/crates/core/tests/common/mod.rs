#![allow(dead_code)]

use gmrf_logdet::spde::build_precision;
use gmrf_logdet::{CsrMatrix, GridSpec, Hyperparams};
use nalgebra::DMatrix;

pub fn grid_q(side: usize, kappa: f64, tau: f64) -> CsrMatrix {
    build_precision(
        &GridSpec::square(side).unwrap(),
        &Hyperparams::new(kappa, tau).unwrap(),
    )
    .unwrap()
}

pub fn dense(q: &CsrMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(q.n(), q.n(), &q.to_dense())
}

/// Dense `log(Q)` from a symmetric eigendecomposition.
pub fn dense_log(q: &CsrMatrix) -> DMatrix<f64> {
    let eig = dense(q).symmetric_eigen();
    let logs = eig.eigenvalues.map(f64::ln);
    &eig.eigenvectors * DMatrix::from_diagonal(&logs) * eig.eigenvectors.transpose()
}

pub fn eigen_logdet(q: &CsrMatrix) -> f64 {
    dense(q).symmetric_eigen().eigenvalues.iter().map(|l| l.ln()).sum()
}
