//! Precision matrices for the lattice model `τ(κ − Δ)u = W` on regular 2D
//! and 3D grids.
//!
//! With `L` the unit-spacing finite-difference negative Laplacian the
//! precision is `Q = τ² (κI + L)ᵀ(κI + L)`, which is SPD for every `κ > 0` and
//! has a 13-point (2D) or 25-point (3D) stencil.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::SpectralBounds;
use crate::sparse::{AdjacencyGraph, CsrMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Reflected boundary: `L` has zero row sums, so constants are in its kernel.
    #[default]
    Neumann,
    /// Zero ghost values outside the grid.
    Dirichlet,
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "neumann" => Ok(Boundary::Neumann),
            "dirichlet" => Ok(Boundary::Dirichlet),
            other => Err(Error::InvalidArgument(format!("unknown boundary `{other}`"))),
        }
    }
}

/// A regular 2D or 3D lattice. Node `(x, y[, z])` has index
/// `x + nx * (y + ny * z)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    extents: Vec<usize>,
    boundary: Boundary,
}

impl GridSpec {
    pub fn new(extents: &[usize], boundary: Boundary) -> Result<Self> {
        if !(2..=3).contains(&extents.len()) {
            return Err(Error::InvalidArgument(format!(
                "grid must be 2D or 3D, got {} axes",
                extents.len()
            )));
        }
        if let Some(&e) = extents.iter().find(|&&e| e < 2) {
            return Err(Error::InvalidArgument(format!(
                "every grid extent must be >= 2, got {e}"
            )));
        }
        Ok(Self {
            extents: extents.to_vec(),
            boundary,
        })
    }

    pub fn square(side: usize) -> Result<Self> {
        Self::new(&[side, side], Boundary::Neumann)
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn dims(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn size(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut rest = index;
        self.extents
            .iter()
            .map(|&e| {
                let c = rest % e;
                rest /= e;
                c
            })
            .collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.extents)
            .rev()
            .fold(0, |acc, (&c, &e)| acc * e + c)
    }

    /// Node at the middle of the grid.
    pub fn center(&self) -> usize {
        let mid: Vec<usize> = self.extents.iter().map(|&e| e / 2).collect();
        self.index(&mid)
    }

    /// Lattice neighbours of `index` (one step along each axis).
    fn lattice_neighbors(&self, index: usize) -> Vec<usize> {
        let coords = self.coords(index);
        let mut out = Vec::with_capacity(2 * self.dims());
        let mut stride = 1;
        for (axis, &e) in self.extents.iter().enumerate() {
            if coords[axis] > 0 {
                out.push(index - stride);
            }
            if coords[axis] + 1 < e {
                out.push(index + stride);
            }
            stride *= e;
        }
        out
    }

    /// Unit-spacing negative Laplacian plus `shift` on the diagonal.
    pub fn shifted_laplacian(&self, shift: f64) -> Result<CsrMatrix> {
        let n = self.size();
        let mut triplets = Vec::with_capacity(n * (2 * self.dims() + 1));
        for i in 0..n {
            let nbrs = self.lattice_neighbors(i);
            let diag = match self.boundary {
                Boundary::Neumann => nbrs.len() as f64,
                Boundary::Dirichlet => (2 * self.dims()) as f64,
            };
            triplets.push((i, i, diag + shift));
            triplets.extend(nbrs.into_iter().map(|j| (i, j, -1.0)));
        }
        CsrMatrix::from_triplets(n, &triplets)
    }

    /// Nearest-neighbour lattice graph (the pattern of `L`).
    pub fn stencil_graph(&self) -> AdjacencyGraph {
        let n = self.size();
        let mut edges = Vec::with_capacity(n * self.dims());
        for i in 0..n {
            edges.extend(self.lattice_neighbors(i).into_iter().filter(|&j| j > i).map(|j| (i, j)));
        }
        AdjacencyGraph::from_edges(n, &edges).expect("lattice indices are in range")
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// Parses `64x64` or `50x50x50` (Neumann boundary).
    fn from_str(s: &str) -> Result<Self> {
        let extents = s
            .split(['x', 'X'])
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("bad grid spec `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        GridSpec::new(&extents, Boundary::Neumann)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.extents.iter().map(usize::to_string).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Range parameter `kappa` and precision scale `tau`, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub kappa: f64,
    pub tau: f64,
}

impl Hyperparams {
    pub fn new(kappa: f64, tau: f64) -> Result<Self> {
        let h = Self { kappa, tau };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Optimisation coordinates `(log κ, log τ)`.
    pub fn to_log(&self) -> [f64; 2] {
        [self.kappa.ln(), self.tau.ln()]
    }

    pub fn from_log(theta: [f64; 2]) -> Result<Self> {
        Self::new(theta[0].exp(), theta[1].exp())
    }
}

/// `Q = τ² (κI + L)ᵀ(κI + L)` on `grid`.
pub fn build_precision(grid: &GridSpec, h: &Hyperparams) -> Result<CsrMatrix> {
    h.validate()?;
    let b = grid.shifted_laplacian(h.kappa)?;
    symmetric_square(&b, h.tau * h.tau)
}

/// `scale · B B` for symmetric `B`, assembled row by row with a dense
/// accumulator.
fn symmetric_square(b: &CsrMatrix, scale: f64) -> Result<CsrMatrix> {
    let n = b.n();
    let mut acc = vec![0.0; n];
    let mut seen = vec![usize::MAX; n];
    let mut touched = Vec::new();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut col_indices = Vec::new();
    let mut values = Vec::new();
    row_offsets.push(0);
    for i in 0..n {
        touched.clear();
        let (cols_i, vals_i) = b.row(i);
        for (&k, &bik) in cols_i.iter().zip(vals_i) {
            let (cols_k, vals_k) = b.row(k);
            for (&j, &bkj) in cols_k.iter().zip(vals_k) {
                if seen[j] != i {
                    seen[j] = i;
                    acc[j] = 0.0;
                    touched.push(j);
                }
                acc[j] += bik * bkj;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            col_indices.push(j);
            values.push(scale * acc[j]);
        }
        row_offsets.push(col_indices.len());
    }
    CsrMatrix::from_raw(n, row_offsets, col_indices, values)
}

/// Spectral enclosure of `Q` without iteration: `L` is PSD with Gershgorin
/// bound `4·dims`, so every eigenvalue of Q lies in `[τ²κ², τ²(κ + 4·dims)²]`.
pub fn precision_spectral_bounds(grid: &GridSpec, h: &Hyperparams) -> Result<SpectralBounds> {
    h.validate()?;
    let tau2 = h.tau * h.tau;
    let top = h.kappa + 4.0 * grid.dims() as f64;
    SpectralBounds::new(tau2 * h.kappa * h.kappa, tau2 * top * top)
}

/// `d/dτ log det Q(κ, τ) = 2n / τ`, since `Q` scales with `τ²`.
pub fn precision_dlogdet_dtau(grid: &GridSpec, h: &Hyperparams) -> Result<f64> {
    h.validate()?;
    Ok(2.0 * grid.size() as f64 / h.tau)
}
