use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("dense path limited to n <= {cap}, got n = {n}")]
    DenseCapExceeded { n: usize, cap: usize },

    #[error(
        "elliptic parameter out of range for spectral ratio {ratio:e}; \
         widen lambda_min (larger margin) or rescale the matrix"
    )]
    EllipticParameter { ratio: f64 },

    #[error("CG did not converge in {iterations} iterations (relative residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("{failed} of {total} shifted systems did not converge after {iterations} iterations")]
    ShiftsNotConverged {
        failed: usize,
        total: usize,
        iterations: usize,
    },

    #[error("probing-distance heuristic degenerate: eps {eps:e} >= |w_j| = {diag:e}")]
    DegenerateHeuristic { eps: f64, diag: f64 },

    #[error("probing vector {index} failed: {source}")]
    ProbingVector {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix market parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("hyperparameter fit aborted: {message}")]
    FitAborted {
        message: String,
        trace: Box<crate::likelihood::OptimizerTrace>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
