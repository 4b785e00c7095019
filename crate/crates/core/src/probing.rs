//! Distance-k graph colouring and the probing vectors it induces.
//!
//! Each colour class is a set of nodes pairwise more than `k` hops apart.
//! Summing `v_cᵀ f(Q) v_c` over the class vectors recovers `tr f(Q)` up to the
//! entries `f(Q)_ij` between same-coloured nodes, which are small when `f(Q)`
//! decays faster than the colouring distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{AdjacencyGraph, BfsScratch, CsrMatrix};

/// Node colouring in which equal colours are more than `k` hops apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coloring {
    pub k: usize,
    pub color_of: Vec<usize>,
    pub num_colors: usize,
}

impl Coloring {
    pub fn n(&self) -> usize {
        self.color_of.len()
    }

    /// Nodes of each colour, in increasing node order.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut classes = vec![Vec::new(); self.num_colors];
        for (node, &c) in self.color_of.iter().enumerate() {
            classes[c].push(node);
        }
        classes
    }

    /// Checks the colouring against `graph` by a ball search from every node.
    pub fn is_valid_for(&self, graph: &AdjacencyGraph) -> bool {
        if graph.n() != self.n() {
            return false;
        }
        let mut scratch = BfsScratch::new(graph.n());
        (0..graph.n()).all(|i| {
            graph
                .distance_ball_with(i, self.k, &mut scratch)
                .map(|ball| ball.iter().all(|&j| j == i || self.color_of[j] != self.color_of[i]))
                .unwrap_or(false)
        })
    }
}

/// Greedy distance-`k` colouring in natural node order: each node takes the
/// smallest colour not already used inside its radius-`k` ball.
pub fn color_distance_k(graph: &AdjacencyGraph, k: usize) -> Result<Coloring> {
    if k < 1 {
        return Err(Error::InvalidArgument("colouring distance k must be >= 1".into()));
    }
    let n = graph.n();
    const UNCOLORED: usize = usize::MAX;
    let mut color_of = vec![UNCOLORED; n];
    // forbidden[c] == i + 1 marks colour c as taken around node i
    let mut forbidden: Vec<usize> = Vec::new();
    let mut scratch = BfsScratch::new(n);
    let mut num_colors = 0;
    for i in 0..n {
        for &j in graph.distance_ball_with(i, k, &mut scratch)? {
            let c = color_of[j];
            if c != UNCOLORED {
                forbidden[c] = i + 1;
            }
        }
        let c = (0..num_colors).find(|&c| forbidden[c] != i + 1).unwrap_or(num_colors);
        if c == num_colors {
            num_colors += 1;
            forbidden.push(0);
        }
        color_of[i] = c;
    }
    Ok(Coloring {
        k,
        color_of,
        num_colors,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbingMode {
    /// Entries 1 on the colour class.
    Indicator,
    /// Independent ±1 entries on the colour class.
    #[default]
    Signed,
}

impl std::str::FromStr for ProbingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "indicator" => Ok(ProbingMode::Indicator),
            "signed" => Ok(ProbingMode::Signed),
            other => Err(Error::InvalidArgument(format!("unknown probing mode `{other}`"))),
        }
    }
}

/// Sparse probing vector supported on one colour class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbingVector {
    pub color: usize,
    pub support: Vec<usize>,
    /// `None` for indicator vectors, otherwise one ±1 per support entry.
    pub signs: Option<Vec<f64>>,
}

impl ProbingVector {
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.support.iter().enumerate().map(move |(p, &i)| {
            (i, self.signs.as_ref().map_or(1.0, |s| s[p]))
        })
    }

    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        for (i, x) in self.entries() {
            v[i] = x;
        }
        v
    }

    /// `vᵀ w` touching only the support.
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.entries().map(|(i, x)| x * w[i]).sum()
    }
}

/// The probing vector of colour `color`. Signs for colour `c` come from
/// ChaCha stream `c` under `seed`, so vectors can be produced independently
/// and in any order.
pub fn probing_vector(
    coloring: &Coloring,
    class: Vec<usize>,
    color: usize,
    mode: ProbingMode,
    seed: u64,
) -> ProbingVector {
    debug_assert!(class.iter().all(|&i| coloring.color_of[i] == color));
    let signs = match mode {
        ProbingMode::Indicator => None,
        ProbingMode::Signed => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(color as u64);
            Some(
                class
                    .iter()
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect(),
            )
        }
    };
    ProbingVector {
        color,
        support: class,
        signs,
    }
}

/// One probing vector per colour, in colour order.
pub fn probing_vectors(coloring: &Coloring, mode: ProbingMode, seed: u64) -> Vec<ProbingVector> {
    coloring
        .classes()
        .into_iter()
        .enumerate()
        .map(|(c, class)| probing_vector(coloring, class, c, mode, seed))
        .collect()
}

/// Probing-distance heuristic: for each sample node `j`, compute
/// `w = log(Q) e_j` and find the first BFS ring (in the graph of `q`) on which
/// every `|w_l| < eps`. Returns the largest ring index still above `eps`,
/// maximised over the samples.
pub fn estimate_probing_distance<F>(
    q: &CsrMatrix,
    eps: f64,
    sample_nodes: &[usize],
    apply_log: F,
) -> Result<usize>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    if sample_nodes.is_empty() {
        return Err(Error::InvalidArgument("at least one sample node required".into()));
    }
    let graph = AdjacencyGraph::from_matrix(q);
    let n = q.n();
    let mut best = 0;
    for &j in sample_nodes {
        if j >= n {
            return Err(Error::NodeOutOfRange { node: j, n });
        }
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let w = apply_log(&e)?;
        if eps >= w[j].abs() {
            return Err(Error::DegenerateHeuristic { eps, diag: w[j].abs() });
        }
        let levels = graph.distance_levels(j, n)?;
        let first_small = levels
            .iter()
            .position(|ring| ring.iter().all(|&l| w[l].abs() < eps))
            .unwrap_or(levels.len());
        best = best.max(first_small.saturating_sub(1));
    }
    Ok(best)
}

/// Centre node plus `extra` distinct random nodes.
pub fn default_sample_nodes(n: usize, center: usize, extra: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![center.min(n.saturating_sub(1))];
    while nodes.len() < (extra + 1).min(n) {
        let j = rng.random_range(0..n);
        if !nodes.contains(&j) {
            nodes.push(j);
        }
    }
    nodes
}
