//! Log-determinant estimation for sparse GMRF precision matrices.

pub mod dense;
pub mod elliptic;
pub mod error;
pub mod krylov;
pub mod likelihood;
pub mod logdet;
pub mod mtx;
pub mod probing;
pub mod quadrature;
pub mod sparse;
pub mod spde;

pub use error::{Error, Result};
pub use krylov::{SolveStats, SolverConfig};
pub use likelihood::{FitBackend, FitConfig, OptimizerTrace, Schedule};
pub use logdet::{Estimator, LogDetEstimate, LogDetMethod};
pub use probing::{Coloring, ProbingMode};
pub use quadrature::{QuadratureRule, SpectralBounds};
pub use sparse::{AdjacencyGraph, CsrMatrix};
pub use spde::{Boundary, GridSpec, Hyperparams};
