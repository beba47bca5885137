//! Communication graphs and doubly stochastic mixing matrices.
//!
//! A [`MixingMatrix`] carries its certified contraction `ρ̄ = 1 − ‖UᵀAU‖₂`,
//! where `U` is the orthonormal basis of the complement of `span{𝟙}` produced
//! by [`ProjectionBasis::new`]. Time-varying networks are periodic
//! [`MixingSchedule`]s whose contraction is certified over every window of `B`
//! consecutive products.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{matrix_to_csv, spectral_norm};
use crate::rng::stream_rng;

/// Absolute tolerance on row and column sums.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("graph is not connected: {0}")]
    Connectivity(String),
    #[error("invalid matrix: {0}")]
    Validation(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("edge list line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Undirected simple graph on nodes `0..n`. Self-loops are implicit and never
/// stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

fn ordered(i: usize, j: usize) -> (usize, usize) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

impl Graph {
    /// Builds a graph from 0-based pairs. Loops `(i, i)` are dropped; a pair
    /// listed twice (in either orientation) is rejected.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Dimension("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(TopologyError::Dimension(format!(
                    "edge ({}, {}) out of range for n = {}",
                    i + 1,
                    j + 1,
                    n
                )));
            }
            if i == j {
                continue;
            }
            if !set.insert(ordered(i, j)) {
                return Err(TopologyError::Validation(format!(
                    "duplicate edge ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(Self { n, edges: set })
    }

    /// Parses the text edge-list format: one `i j` pair per line, 1-based.
    /// Blank lines and `#` comments are ignored. Without an explicit `n` the
    /// node count is the largest index seen.
    pub fn from_edge_list(text: &str, n: Option<usize>) -> Result<Self, TopologyError> {
        let mut pairs = Vec::new();
        let mut max_index = 0usize;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: &str| TopologyError::Parse {
                line: idx + 1,
                msg: msg.to_string(),
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(parse_err("expected two node indices"));
            }
            let i: usize = fields[0].parse().map_err(|_| parse_err("bad node index"))?;
            let j: usize = fields[1].parse().map_err(|_| parse_err("bad node index"))?;
            if i == 0 || j == 0 {
                return Err(parse_err("node indices are 1-based"));
            }
            max_index = max_index.max(i).max(j);
            pairs.push((i - 1, j - 1));
        }
        let n = n.unwrap_or(max_index);
        Graph::new(n, pairs)
    }

    /// Inverse of [`Graph::from_edge_list`].
    pub fn to_edge_list(&self) -> String {
        self.edges
            .iter()
            .map(|(i, j)| format!("{} {}\n", i + 1, j + 1))
            .collect()
    }

    pub fn path(n: usize) -> Self {
        Graph::new(n, (1..n).map(|i| (i - 1, i))).expect("path edges are valid")
    }

    pub fn ring(n: usize) -> Self {
        if n < 3 {
            return Graph::path(n);
        }
        Graph::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("ring edges are valid")
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
        Graph::new(n, edges).expect("complete edges are valid")
    }

    pub fn star(n: usize) -> Self {
        Graph::new(n, (1..n).map(|i| (0, i))).expect("star edges are valid")
    }

    /// Random connected graph: a random spanning tree plus each remaining pair
    /// with probability `extra`.
    pub fn random_connected(n: usize, extra: f64, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut edges = BTreeSet::new();
        for k in 1..n {
            let parent = order[rng.random_range(0..k)];
            edges.insert(ordered(order[k], parent));
        }
        for i in 0..n {
            for j in i + 1..n {
                if !edges.contains(&(i, j)) && rng.random::<f64>() < extra {
                    edges.insert((i, j));
                }
            }
        }
        Graph { n, edges }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Non-loop edges as ordered pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i == j || self.edges.contains(&ordered(i, j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges.iter().filter(|(a, b)| *a == i || *b == i).count()
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Edge-set union on the same node set.
    pub fn union(&self, other: &Graph) -> Graph {
        assert_eq!(self.n, other.n, "union of graphs with different node counts");
        Graph {
            n: self.n,
            edges: self.edges.union(&other.edges).copied().collect(),
        }
    }

    /// Off-diagonal support of a square matrix.
    pub fn support_of(m: &DMatrix<f64>) -> Graph {
        let n = m.nrows();
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if m[(i, j)] != 0.0 || m[(j, i)] != 0.0 {
                    edges.insert((i, j));
                }
            }
        }
        Graph { n, edges }
    }
}

/// Orthonormal basis `U ∈ ℝ^{n×(n−1)}` of the complement of `span{𝟙}`, so that
/// `UᵀU = I` and `UUᵀ = I − 𝟙𝟙ᵀ/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    u: DMatrix<f64>,
}

impl ProjectionBasis {
    /// Columns 2..n of the Householder reflector that swaps `e₁` and `𝟙/√n`.
    pub fn new(n: usize) -> Result<Self, TopologyError> {
        if n < 2 {
            return Err(TopologyError::Dimension(format!(
                "projection basis needs n >= 2, got {n}"
            )));
        }
        let s = 1.0 / (n as f64).sqrt();
        let mut w = vec![s; n];
        w[0] -= 1.0;
        let w_sq: f64 = w.iter().map(|x| x * x).sum();
        let u = DMatrix::from_fn(n, n - 1, |i, c| {
            let j = c + 1;
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - 2.0 * w[i] * w[j] / w_sq
        });
        Ok(Self { u })
    }

    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.u
    }
}

/// Checks squareness, nonnegativity and unit row/column sums.
pub fn check_doubly_stochastic(m: &DMatrix<f64>) -> Result<(), TopologyError> {
    if m.nrows() != m.ncols() {
        return Err(TopologyError::Validation(format!(
            "matrix is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if m.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(TopologyError::Validation("entries must be finite and nonnegative".into()));
    }
    for i in 0..n {
        let row: f64 = m.row(i).iter().sum();
        let col: f64 = m.column(i).iter().sum();
        if (row - 1.0).abs() > STOCHASTIC_TOL {
            return Err(TopologyError::Validation(format!("row {} sums to {}", i + 1, row)));
        }
        if (col - 1.0).abs() > STOCHASTIC_TOL {
            return Err(TopologyError::Validation(format!("column {} sums to {}", i + 1, col)));
        }
    }
    Ok(())
}

/// `‖UᵀMU‖₂` for a doubly stochastic `M`.
pub fn spectral_contraction(
    m: &DMatrix<f64>,
    basis: &ProjectionBasis,
) -> Result<f64, TopologyError> {
    check_doubly_stochastic(m)?;
    if m.nrows() != basis.n() {
        return Err(TopologyError::Dimension(format!(
            "matrix has n = {}, basis has n = {}",
            m.nrows(),
            basis.n()
        )));
    }
    Ok(projected_norm(m, basis))
}

fn projected_norm(m: &DMatrix<f64>, basis: &ProjectionBasis) -> f64 {
    let u = basis.matrix();
    spectral_norm(&(u.transpose() * m * u))
}

/// `max(|λ₂|, |λₙ|)` for a symmetric doubly stochastic matrix, from its
/// spectrum. Second route to the same quantity as [`spectral_contraction`].
pub fn eigen_contraction(m: &DMatrix<f64>) -> Result<f64, TopologyError> {
    check_doubly_stochastic(m)?;
    if (m - m.transpose()).amax() > STOCHASTIC_TOL {
        return Err(TopologyError::Validation("matrix is not symmetric".into()));
    }
    let mut eig: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(eig.iter().skip(1).fold(0.0f64, |acc, l| acc.max(l.abs())))
}

fn metropolis_entries(graph: &Graph) -> DMatrix<f64> {
    let n = graph.n();
    let deg: Vec<usize> = (0..n).map(|i| graph.degree(i)).collect();
    let mut a = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        let w = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    a
}

/// Doubly stochastic weights supported on a graph, with the certified
/// contraction `ρ̄ = 1 − ‖UᵀAU‖₂` (1 for a single node).
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    entries: DMatrix<f64>,
    rho_bar: f64,
    support: Graph,
}

impl MixingMatrix {
    /// Validates an explicit weight matrix; the support graph is its
    /// off-diagonal nonzero pattern. A matrix without contraction is accepted
    /// (its `rho_bar` is ≤ 0) so the violation can be reported.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self, TopologyError> {
        check_doubly_stochastic(&entries)?;
        let support = Graph::support_of(&entries);
        let rho_bar = contraction_certificate(&entries)?;
        Ok(Self { entries, rho_bar, support })
    }

    /// Like [`MixingMatrix::from_matrix`] but additionally requires the
    /// matrix to vanish off `graph`'s edge set.
    pub fn on_graph(entries: DMatrix<f64>, graph: &Graph) -> Result<Self, TopologyError> {
        if entries.nrows() != graph.n() {
            return Err(TopologyError::Dimension("matrix and graph sizes differ".into()));
        }
        let m = Self::from_matrix(entries)?;
        for (i, j) in m.support.edges() {
            if !graph.has_edge(i, j) {
                return Err(TopologyError::Validation(format!(
                    "nonzero weight on non-edge ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(Self { support: graph.clone(), ..m })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn rho_bar(&self) -> f64 {
        self.rho_bar
    }

    /// Whether the contraction condition `ρ̄ ∈ (0, 1]` holds.
    pub fn contracts(&self) -> bool {
        self.rho_bar > 0.0
    }

    pub fn support(&self) -> &Graph {
        &self.support
    }

    pub fn to_csv(&self) -> String {
        matrix_to_csv(&self.entries)
    }
}

fn contraction_certificate(m: &DMatrix<f64>) -> Result<f64, TopologyError> {
    if m.nrows() == 1 {
        return Ok(1.0);
    }
    let basis = ProjectionBasis::new(m.nrows())?;
    Ok(1.0 - spectral_contraction(m, &basis)?)
}

/// Metropolis–Hastings weights `A_ij = 1/(1 + max(deg_i, deg_j))` on edges,
/// remaining mass on the diagonal.
pub fn build_metropolis_weights(graph: &Graph) -> Result<MixingMatrix, TopologyError> {
    if !graph.is_connected() {
        return Err(TopologyError::Connectivity(format!(
            "{}-node graph with {} edges has more than one component",
            graph.n(),
            graph.edge_count()
        )));
    }
    MixingMatrix::on_graph(metropolis_entries(graph), graph)
}

/// How the edges of a base graph are spread over the steps of one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgePartitionPolicy {
    /// Sorted edge `k` goes to step `k mod B`.
    RoundRobin,
    /// Seeded shuffle, then round robin.
    Shuffled,
    /// Explicit per-step edge sets (0-based pairs); the period is their count.
    Explicit(Vec<Vec<(usize, usize)>>),
}

/// Periodic sequence of doubly stochastic matrices with a joint contraction
/// certificate over windows of `block` consecutive steps.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSchedule {
    matrices: Vec<MixingMatrix>,
    block: usize,
    rho_bar: f64,
}

impl MixingSchedule {
    /// Time-invariant schedule (`B = 1`).
    pub fn fixed(matrix: MixingMatrix) -> Self {
        let rho_bar = matrix.rho_bar();
        Self { matrices: vec![matrix], block: 1, rho_bar }
    }

    /// Schedule from explicit matrices; the joint contraction is computed but
    /// not required to be positive.
    pub fn periodic(matrices: Vec<MixingMatrix>, block: usize) -> Result<Self, TopologyError> {
        if matrices.is_empty() {
            return Err(TopologyError::Dimension("empty schedule".into()));
        }
        if block == 0 {
            return Err(TopologyError::Dimension("block length must be at least 1".into()));
        }
        let n = matrices[0].n();
        if matrices.iter().any(|m| m.n() != n) {
            return Err(TopologyError::Dimension("matrices of different sizes".into()));
        }
        let mut schedule = Self { matrices, block, rho_bar: 0.0 };
        schedule.rho_bar = validate_joint_connectivity(&schedule);
        Ok(schedule)
    }

    pub fn n(&self) -> usize {
        self.matrices[0].n()
    }

    pub fn period(&self) -> usize {
        self.matrices.len()
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn rho_bar(&self) -> f64 {
        self.rho_bar
    }

    pub fn is_static(&self) -> bool {
        self.matrices.len() == 1 && self.block == 1
    }

    /// `A⁽ᵗ⁾`.
    pub fn at(&self, t: usize) -> &MixingMatrix {
        &self.matrices[t % self.matrices.len()]
    }

    pub fn matrices(&self) -> &[MixingMatrix] {
        &self.matrices
    }

    /// `A⁽ᵗ⁺ᵏ⁻¹⁾ ⋯ A⁽ᵗ⁾`.
    pub fn window_product(&self, t: usize, k: usize) -> DMatrix<f64> {
        let n = self.n();
        let mut p = DMatrix::identity(n, n);
        for s in t..t + k {
            p = self.at(s).entries() * p;
        }
        p
    }
}

/// `1 − max_t ‖Uᵀ A⁽ᵗ⁺ᴮ⁻¹⁾⋯A⁽ᵗ⁾ U‖₂` over the window starts of one period.
/// A non-positive value means the joint-connectivity condition fails.
pub fn validate_joint_connectivity(schedule: &MixingSchedule) -> f64 {
    let n = schedule.n();
    if n == 1 {
        return 1.0;
    }
    let basis = ProjectionBasis::new(n).expect("n >= 2");
    let worst = (0..schedule.period())
        .map(|t| projected_norm(&schedule.window_product(t, schedule.block()), &basis))
        .fold(0.0f64, f64::max);
    1.0 - worst
}

/// Splits `graph`'s edges over the steps of a period according to `policy`,
/// puts Metropolis weights on each step's subgraph and certifies the result.
/// Every window of `block` consecutive steps must have a connected union.
pub fn make_tv_schedule(
    graph: &Graph,
    block: usize,
    policy: &EdgePartitionPolicy,
    seed: u64,
) -> Result<MixingSchedule, TopologyError> {
    if block == 0 {
        return Err(TopologyError::Dimension("block length must be at least 1".into()));
    }
    let n = graph.n();
    let step_edges: Vec<Vec<(usize, usize)>> = match policy {
        EdgePartitionPolicy::RoundRobin | EdgePartitionPolicy::Shuffled => {
            let mut edges: Vec<(usize, usize)> = graph.edges().collect();
            if matches!(policy, EdgePartitionPolicy::Shuffled) {
                edges.shuffle(&mut stream_rng(seed, 0));
            }
            let mut buckets = vec![Vec::new(); block];
            for (k, e) in edges.into_iter().enumerate() {
                buckets[k % block].push(e);
            }
            buckets
        }
        EdgePartitionPolicy::Explicit(sets) => {
            if sets.is_empty() {
                return Err(TopologyError::Dimension("explicit policy with no steps".into()));
            }
            for set in sets {
                for &(i, j) in set {
                    if !graph.has_edge(i, j) {
                        return Err(TopologyError::Validation(format!(
                            "step edge ({}, {}) not in base graph",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
            sets.clone()
        }
    };
    let subgraphs = step_edges
        .into_iter()
        .map(|edges| Graph::new(n, edges))
        .collect::<Result<Vec<_>, _>>()?;
    let period = subgraphs.len();
    for t in 0..period {
        let mut joint = subgraphs[t].clone();
        for k in 1..block {
            joint = joint.union(&subgraphs[(t + k) % period]);
        }
        if !joint.is_connected() {
            return Err(TopologyError::Connectivity(format!(
                "window starting at step {t} (length {block}) is disconnected"
            )));
        }
    }
    let matrices = subgraphs
        .iter()
        .map(|g| MixingMatrix::on_graph(metropolis_entries(g), g))
        .collect::<Result<Vec<_>, _>>()?;
    MixingSchedule::periodic(matrices, block)
}
