//! Compressed-sparse-row storage for symmetric matrices and the adjacency
//! graph induced by their off-diagonal pattern.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative tolerance for numerical symmetry checks.
const SYMMETRY_TOL: f64 = 1e-12;

/// A sparse symmetric matrix in CSR form with the full (both triangles)
/// pattern stored.
///
/// Invariants checked at construction: nondecreasing row offsets, strictly
/// increasing columns within a row, structural and numerical symmetry, and a
/// strictly positive stored diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed;
    /// explicit zeros are kept since they define graph structure.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut counts = vec![0usize; n + 1];
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(Error::InvalidMatrix(format!(
                    "entry ({i}, {j}) outside {n}x{n}"
                )));
            }
            counts[i + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            let slot = cursor[i];
            cols[slot] = j;
            vals[slot] = v;
            cursor[i] += 1;
        }

        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            scratch.clear();
            scratch.extend((counts[i]..counts[i + 1]).map(|p| (cols[p], vals[p])));
            // stable sort keeps the summation order of duplicates deterministic
            scratch.sort_by_key(|&(j, _)| j);
            for &(j, v) in scratch.iter() {
                if col_indices.len() > row_offsets[i] && *col_indices.last().unwrap() == j {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_indices.push(j);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self::from_raw(n, row_offsets, col_indices, values)
    }

    /// Wraps already-assembled CSR arrays after validating every invariant.
    pub fn from_raw(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            n,
            row_offsets,
            col_indices,
            values,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n]).expect("identity is valid")
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::from_raw(n, (0..=n).collect(), (0..n).collect(), diag.to_vec())
    }

    fn validate(&self) -> Result<()> {
        let n = self.n;
        let bad = |msg: String| Err(Error::InvalidMatrix(msg));
        if self.row_offsets.len() != n + 1 || self.row_offsets[0] != 0 {
            return bad("row_offsets must have length n+1 and start at 0".into());
        }
        if self.row_offsets[n] != self.col_indices.len()
            || self.col_indices.len() != self.values.len()
        {
            return bad("row_offsets[n], col_indices and values lengths disagree".into());
        }
        for i in 0..n {
            let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
            if hi < lo {
                return bad(format!("row_offsets decreases at row {i}"));
            }
            let cols = &self.col_indices[lo..hi];
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("columns in row {i} not strictly increasing"));
            }
            if cols.last().is_some_and(|&j| j >= n) {
                return bad(format!("column index out of range in row {i}"));
            }
            match self.get(i, i) {
                Some(d) if d > 0.0 => {}
                Some(d) => return bad(format!("diagonal entry {i} is {d}, must be > 0")),
                None => return bad(format!("diagonal entry {i} missing")),
            }
        }
        for i in 0..n {
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                let j = self.col_indices[p];
                let aij = self.values[p];
                match self.get(j, i) {
                    None => return bad(format!("entry ({i}, {j}) has no mirror ({j}, {i})")),
                    Some(aji) if (aij - aji).abs() > SYMMETRY_TOL * aij.abs().max(1.0) => {
                        return bad(format!("entries ({i}, {j}) and ({j}, {i}) differ"));
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at `(i, j)`, or `None` outside the pattern.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|p| vals[p])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i).unwrap_or(0.0)).collect()
    }

    /// Bytes held by the index and value arrays.
    pub fn memory_bytes(&self) -> usize {
        self.row_offsets.len() * std::mem::size_of::<usize>()
            + self.col_indices.len() * std::mem::size_of::<usize>()
            + self.values.len() * std::mem::size_of::<f64>()
    }

    /// Returns `c * A`; `c` must be positive to keep the diagonal valid.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if c <= 0.0 || !c.is_finite() {
            return Err(Error::InvalidArgument(format!("scale factor {c} must be > 0")));
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= c);
        Ok(out)
    }

    /// Returns `A + B` over the union pattern.
    pub fn add(&self, other: &CsrMatrix) -> Result<Self> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: other.n,
            });
        }
        let triplets: Vec<_> = self.triplets().chain(other.triplets()).collect();
        Self::from_triplets(self.n, &triplets)
    }

    /// Iterates over all stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    /// Dense row-major copy; only meant for small matrices.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut dense = vec![0.0; n * n];
        for (i, j, v) in self.triplets() {
            dense[i * n + j] = v;
        }
        dense
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without allocation. Each row is summed left to right, so the
    /// result does not depend on how rows are scheduled.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n, "matvec: x has wrong length");
        assert_eq!(y.len(), self.n, "matvec: y has wrong length");
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row_dot(i, x);
        }
    }

    /// Row-parallel `A x`; bitwise identical to [`CsrMatrix::matvec`].
    pub fn par_matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        let mut y = vec![0.0; self.n];
        y.par_iter_mut()
            .enumerate()
            .for_each(|(i, yi)| *yi = self.row_dot(i, x));
        Ok(y)
    }

    #[inline]
    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (lo, hi) = (self.row_offsets[i], self.row_offsets[i + 1]);
        let mut acc = 0.0;
        for p in lo..hi {
            acc += self.values[p] * x[self.col_indices[p]];
        }
        acc
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: len,
            });
        }
        Ok(())
    }
}

/// Undirected graph on `0..n` stored as CSR neighbor lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl AdjacencyGraph {
    /// Off-diagonal sparsity pattern of `a`. Explicit zeros count as edges.
    pub fn from_matrix(a: &CsrMatrix) -> Self {
        let mut offsets = Vec::with_capacity(a.n() + 1);
        let mut neighbors = Vec::with_capacity(a.nnz().saturating_sub(a.n()));
        offsets.push(0);
        for i in 0..a.n() {
            let (cols, _) = a.row(i);
            neighbors.extend(cols.iter().copied().filter(|&j| j != i));
            offsets.push(neighbors.len());
        }
        Self { offsets, neighbors }
    }

    /// Builds a graph from an undirected edge list; self-loops and repeated
    /// edges are dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(a, b) in edges {
            for node in [a, b] {
                if node >= n {
                    return Err(Error::NodeOutOfRange { node, n });
                }
            }
            if a != b {
                lists[a].push(b);
                lists[b].push(a);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for mut list in lists {
            list.sort_unstable();
            list.dedup();
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        Ok(Self { offsets, neighbors })
    }

    pub fn n(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// All nodes within graph distance `k` of `j`, in breadth-first order.
    pub fn distance_ball(&self, j: usize, k: usize) -> Result<Vec<usize>> {
        let mut scratch = BfsScratch::new(self.n());
        Ok(self.distance_ball_with(j, k, &mut scratch)?.to_vec())
    }

    /// Breadth-first distance levels around `j` up to `k`: `levels[d]` holds
    /// the nodes at exactly distance `d`.
    pub fn distance_levels(&self, j: usize, k: usize) -> Result<Vec<Vec<usize>>> {
        let mut scratch = BfsScratch::new(self.n());
        let mut levels = Vec::new();
        self.bfs(j, k, &mut scratch, |node, d| {
            if levels.len() <= d {
                levels.push(Vec::new());
            }
            levels[d].push(node);
        })?;
        Ok(levels)
    }

    /// Ball query reusing caller-provided scratch space; the returned slice
    /// lives in the scratch buffer.
    pub fn distance_ball_with<'s>(
        &self,
        j: usize,
        k: usize,
        scratch: &'s mut BfsScratch,
    ) -> Result<&'s [usize]> {
        let mut visited = std::mem::take(&mut scratch.order);
        visited.clear();
        self.bfs(j, k, scratch, |node, _| visited.push(node))?;
        scratch.order = visited;
        Ok(&scratch.order)
    }

    fn bfs<F: FnMut(usize, usize)>(
        &self,
        j: usize,
        k: usize,
        scratch: &mut BfsScratch,
        mut visit: F,
    ) -> Result<()> {
        let n = self.n();
        if j >= n {
            return Err(Error::NodeOutOfRange { node: j, n });
        }
        scratch.ensure(n);
        scratch.epoch = scratch.epoch.wrapping_add(1);
        if scratch.epoch == 0 {
            scratch.mark.iter_mut().for_each(|m| *m = 0);
            scratch.epoch = 1;
        }
        let epoch = scratch.epoch;
        scratch.queue.clear();
        scratch.mark[j] = epoch;
        scratch.queue.push_back((j, 0));
        while let Some((node, d)) = scratch.queue.pop_front() {
            visit(node, d);
            if d == k {
                continue;
            }
            for &nb in self.neighbors(node) {
                if scratch.mark[nb] != epoch {
                    scratch.mark[nb] = epoch;
                    scratch.queue.push_back((nb, d + 1));
                }
            }
        }
        Ok(())
    }
}

/// Reusable buffers for repeated breadth-first searches on one graph.
#[derive(Debug, Default)]
pub struct BfsScratch {
    mark: Vec<u32>,
    epoch: u32,
    queue: VecDeque<(usize, usize)>,
    order: Vec<usize>,
}

impl BfsScratch {
    pub fn new(n: usize) -> Self {
        Self {
            mark: vec![0; n],
            ..Self::default()
        }
    }

    fn ensure(&mut self, n: usize) {
        if self.mark.len() < n {
            self.mark.resize(n, 0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(n: usize) -> AdjacencyGraph {
        let edges: Vec<_> = (0..n - 1).map(|i| (i, i + 1)).collect();
        AdjacencyGraph::from_edges(n, &edges).unwrap()
    }

    fn grid(nx: usize, ny: usize) -> AdjacencyGraph {
        let mut edges = Vec::new();
        for y in 0..ny {
            for x in 0..nx {
                let i = y * nx + x;
                if x + 1 < nx {
                    edges.push((i, i + 1));
                }
                if y + 1 < ny {
                    edges.push((i, i + nx));
                }
            }
        }
        AdjacencyGraph::from_edges(nx * ny, &edges).unwrap()
    }

    #[test]
    fn identity_matvec() {
        let a = CsrMatrix::identity(3);
        assert_eq!(a.matvec(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_scaling() {
        let a = CsrMatrix::from_diagonal(&[2.0, 2.0]).unwrap();
        assert_eq!(a.matvec(&[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn matvec_dimension_mismatch() {
        let a = CsrMatrix::identity(3);
        assert!(matches!(
            a.matvec(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, actual: 1 })
        ));
    }

    #[test]
    fn duplicates_summed_and_zeros_kept() {
        let a = CsrMatrix::from_triplets(
            2,
            &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 1.0), (0, 1, 0.0), (1, 0, 0.0)],
        )
        .unwrap();
        assert_eq!(a.get(0, 0), Some(3.0));
        assert_eq!(a.get(0, 1), Some(0.0));
        assert_eq!(AdjacencyGraph::from_matrix(&a).neighbors(0), &[1]);
    }

    #[test]
    fn rejects_asymmetric_pattern() {
        let err = CsrMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 0.5)]);
        assert!(matches!(err, Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn rejects_asymmetric_values() {
        let err = CsrMatrix::from_triplets(
            2,
            &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 0.5), (1, 0, 0.6)],
        );
        assert!(matches!(err, Err(Error::InvalidMatrix(_))));
    }

    #[test]
    fn rejects_nonpositive_or_missing_diagonal() {
        assert!(CsrMatrix::from_diagonal(&[1.0, 0.0]).is_err());
        assert!(CsrMatrix::from_triplets(2, &[(0, 0, 1.0)]).is_err());
    }

    #[test]
    fn rejects_unsorted_columns() {
        let err = CsrMatrix::from_raw(
            2,
            vec![0, 2, 4],
            vec![1, 0, 0, 1],
            vec![0.1, 1.0, 0.1, 1.0],
        );
        assert!(err.is_err());
    }

    #[test]
    fn par_matvec_bitwise_equal() {
        let mut t = Vec::new();
        for i in 0..50 {
            t.push((i, i, 3.0 + i as f64 * 0.1));
            if i + 1 < 50 {
                t.push((i, i + 1, -0.3 / (i + 1) as f64));
                t.push((i + 1, i, -0.3 / (i + 1) as f64));
            }
        }
        let a = CsrMatrix::from_triplets(50, &t).unwrap();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(a.matvec(&x).unwrap(), a.par_matvec(&x).unwrap());
    }

    #[test]
    fn ball_on_path() {
        let g = path(5);
        let mut ball = g.distance_ball(2, 1).unwrap();
        ball.sort_unstable();
        assert_eq!(ball, vec![1, 2, 3]);
    }

    #[test]
    fn zero_radius_ball() {
        let g = grid(4, 4);
        for j in 0..16 {
            assert_eq!(g.distance_ball(j, 0).unwrap(), vec![j]);
        }
    }

    #[test]
    fn ball_out_of_range() {
        assert!(matches!(
            path(3).distance_ball(3, 1),
            Err(Error::NodeOutOfRange { node: 3, n: 3 })
        ));
    }

    #[test]
    fn diamond_on_grid() {
        // brute force: nodes with Manhattan distance <= 2 from the centre
        let g = grid(5, 5);
        let centre = 2 * 5 + 2;
        let expected: Vec<usize> = (0..25)
            .filter(|&i| {
                let (x, y) = ((i % 5) as i64, (i / 5) as i64);
                (x - 2).abs() + (y - 2).abs() <= 2
            })
            .collect();
        let mut ball = g.distance_ball(centre, 2).unwrap();
        ball.sort_unstable();
        assert_eq!(ball.len(), 13);
        assert_eq!(ball, expected);
    }

    #[test]
    fn levels_partition_ball() {
        let g = grid(6, 6);
        let levels = g.distance_levels(0, 3).unwrap();
        assert_eq!(levels.len(), 4);
        assert_eq!(levels[0], vec![0]);
        assert_eq!(levels.iter().map(Vec::len).sum::<usize>(), 10);
    }

    #[test]
    fn graph_is_undirected_without_loops() {
        let g = grid(5, 4);
        for i in 0..g.n() {
            for &j in g.neighbors(i) {
                assert_ne!(i, j);
                assert!(g.neighbors(j).contains(&i));
            }
        }
    }
}
