//! Communication graphs, mixing matrices and time-varying mixing schedules.
//!
//! A schedule produces one mixing matrix per round. Over every block of
//! `tau` consecutive rounds the product of those matrices must contract the
//! deviation from consensus by `1 - p` in expectation; this module computes
//! that rate spectrally for static matrices and checks it by Monte Carlo for
//! any schedule.

use std::borrow::Cow;
use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Tolerance used when validating row/column sums and symmetry.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Maximum number of Erdos-Renyi draws before giving up on connectivity.
pub const ER_MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Topology {
    Ring,
    Complete,
    /// Node 0 is the hub.
    Star,
    ErdosRenyi { prob: f64 },
}

/// Undirected simple graph; self-communication is implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Pairs are normalized to `(min, max)`.
    pub fn new(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a >= n || b >= n {
                return Err(Error::invalid("edges", format!("endpoint of ({a}, {b}) out of range for n = {n}")));
            }
            if a == b {
                return Err(Error::invalid("edges", format!("self-loop at node {a}")));
            }
            if !edges.insert((a.min(b), a.max(b))) {
                return Err(Error::invalid("edges", format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Graph { n, edges })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Breadth-first connectivity check.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return true;
        }
        let adj = self.adjacency();
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
}

pub fn build_graph(kind: Topology, n: usize, seed: u64) -> Result<Graph> {
    if n < 2 {
        return Err(Error::invalid("n", format!("need at least 2 nodes, got {n}")));
    }
    match kind {
        Topology::Ring => {
            // n = 2 degenerates to a single edge.
            let pairs: BTreeSet<_> = (0..n).map(|i| (i.min((i + 1) % n), i.max((i + 1) % n))).collect();
            Graph::new(n, pairs)
        }
        Topology::Complete => Graph::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))),
        Topology::Star => Graph::new(n, (1..n).map(|j| (0, j))),
        Topology::ErdosRenyi { prob } => {
            if !(prob > 0.0 && prob <= 1.0) {
                return Err(Error::invalid("prob", format!("edge probability must be in (0, 1], got {prob}")));
            }
            let mut rng = seed::stream(seed, seed::PROBLEM_TAG ^ 0x6772_6170, 0);
            for _ in 0..ER_MAX_ATTEMPTS {
                let mut pairs = Vec::new();
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < prob {
                            pairs.push((i, j));
                        }
                    }
                }
                let g = Graph::new(n, pairs)?;
                if g.is_connected() {
                    return Ok(g);
                }
            }
            Err(Error::ConnectivityRetriesExhausted {
                n,
                prob,
                attempts: ER_MAX_ATTEMPTS,
            })
        }
    }
}

/// Symmetric doubly stochastic mixing matrix.
///
/// Keeps a sparse copy of the nonzero pattern for the per-round multiply.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    dense: DMatrix<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Validates symmetry and double stochasticity within [`STOCHASTIC_TOL`].
    pub fn from_dense(dense: DMatrix<f64>) -> Result<Self> {
        if !dense.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "mixing matrix is {}x{}",
                dense.nrows(),
                dense.ncols()
            )));
        }
        let asym = max_asymmetry(&dense);
        if asym > STOCHASTIC_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        if dense.iter().any(|&w| w < 0.0) {
            return Err(Error::invalid("weights", "mixing weights must be nonnegative"));
        }
        let dev = stochastic_deviation(&dense);
        if dev > STOCHASTIC_TOL {
            return Err(Error::NotDoublyStochastic(dev));
        }
        Ok(Self::from_dense_unchecked(dense))
    }

    fn from_dense_unchecked(dense: DMatrix<f64>) -> Self {
        let n = dense.nrows();
        let rows = (0..n)
            .map(|i| (0..n).filter(|&j| dense[(i, j)] != 0.0).map(|j| (j, dense[(i, j)])).collect())
            .collect();
        MixingMatrix { dense, rows }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_dense_unchecked(DMatrix::identity(n, n))
    }

    /// Uniform averaging `11^T / n`.
    pub fn averaging(n: usize) -> Self {
        Self::from_dense_unchecked(DMatrix::from_element(n, n, 1.0 / n as f64))
    }

    pub fn n(&self) -> usize {
        self.dense.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dense[(i, j)]
    }

    pub fn as_dense(&self) -> &DMatrix<f64> {
        &self.dense
    }

    pub fn is_identity(&self) -> bool {
        self.rows.iter().enumerate().all(|(i, r)| r.len() == 1 && r[0] == (i, 1.0))
    }

    /// Max deviation of any row or column sum from 1.
    pub fn stochastic_deviation(&self) -> f64 {
        stochastic_deviation(&self.dense)
    }

    /// `out_i = sum_j w_ij x_j` for row-major `n x d` buffers.
    pub fn mix_rows(&self, input: &[f64], d: usize, out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.n() * d);
        debug_assert_eq!(out.len(), input.len());
        for (i, row) in self.rows.iter().enumerate() {
            let dst = &mut out[i * d..(i + 1) * d];
            dst.fill(0.0);
            for &(j, w) in row {
                crate::linalg::axpy(w, &input[j * d..(j + 1) * d], dst);
            }
        }
    }

    /// Comma-separated rows, full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n()).map(|j| format!("{:?}", self.dense[(i, j)])).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn stochastic_deviation(m: &DMatrix<f64>) -> f64 {
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

/// Metropolis-Hastings weights: `1 / (1 + max(deg_i, deg_j))` on edges,
/// the remainder on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix> {
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    Ok(metropolis_unchecked(g))
}

/// Same construction without the connectivity requirement; used for
/// randomly thinned graphs, where a single round may be disconnected.
fn metropolis_unchecked(g: &Graph) -> MixingMatrix {
    let n = g.n();
    let deg = g.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (a, b) in g.edges() {
        let v = 1.0 / (1.0 + deg[a].max(deg[b]) as f64);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_dense_unchecked(w)
}

/// Largest eigenvalue magnitude of `m` on the complement of the all-ones
/// direction, with its eigenvector. `m` must be symmetric.
pub fn consensus_spectrum(m: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let asym = max_asymmetry(m);
    if asym > STOCHASTIC_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    let n = m.nrows();
    let centered = m - DMatrix::from_element(n, n, m.sum() / (n * n) as f64);
    let eig = SymmetricEigen::new(centered);
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.abs()))
        .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    Ok((lambda, eig.eigenvectors.column(idx).iter().copied().collect()))
}

/// Tight consensus rate of a static symmetric doubly stochastic matrix:
/// `p = 1 - lambda^2` with `lambda` the second largest eigenvalue magnitude.
pub fn spectral_consensus_rate(w: &MixingMatrix) -> Result<f64> {
    let (lambda, _) = consensus_spectrum(w.as_dense())?;
    let p = 1.0 - lambda * lambda;
    if !(p > 1e-14 && p <= 1.0) {
        return Err(Error::NoMixing(p));
    }
    Ok(p)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScheduleKind {
    Static,
    /// Identity except on rounds with `t mod tau == tau - 1`.
    PeriodicGossip { tau: usize },
    /// Each edge kept independently with `keep_prob` every round, then
    /// Metropolis weights on the surviving subgraph.
    IidEdgeSample { keep_prob: f64 },
}

/// Source of per-round mixing matrices with a declared `(tau, p)`.
#[derive(Clone, Debug)]
pub struct MixingSchedule {
    kind: ScheduleKind,
    graph: Graph,
    gossip: MixingMatrix,
    identity: MixingMatrix,
    declared_tau: usize,
    declared_p: f64,
}

impl MixingSchedule {
    /// Static schedule over Metropolis weights of `graph`, declaring the spectral rate.
    pub fn fixed(graph: Graph) -> Result<Self> {
        let gossip = metropolis_weights(&graph)?;
        let p = spectral_consensus_rate(&gossip)?;
        Self::new(ScheduleKind::Static, graph, gossip, 1, p)
    }

    /// Gossip every `tau`-th round; one gossip round per block, so the
    /// declared rate is the spectral rate of the gossip matrix with that `tau`.
    pub fn periodic(graph: Graph, tau: usize) -> Result<Self> {
        let gossip = metropolis_weights(&graph)?;
        let p = spectral_consensus_rate(&gossip)?;
        Self::new(ScheduleKind::PeriodicGossip { tau }, graph, gossip, tau, p)
    }

    /// Randomly thinned Metropolis gossip. The rate is not known in closed
    /// form; it is estimated with [`estimate_consensus_rate`] using `draws` blocks.
    pub fn edge_sampled(graph: Graph, keep_prob: f64, draws: usize, seed: u64) -> Result<Self> {
        if !(keep_prob > 0.0 && keep_prob <= 1.0) {
            return Err(Error::invalid("keep_prob", format!("must be in (0, 1], got {keep_prob}")));
        }
        let gossip = metropolis_weights(&graph)?;
        let mut s = Self::new(ScheduleKind::IidEdgeSample { keep_prob }, graph, gossip, 1, 1.0)?;
        s.declared_p = estimate_consensus_rate(&s, draws, seed)?;
        Ok(s)
    }

    pub fn new(
        kind: ScheduleKind,
        graph: Graph,
        gossip: MixingMatrix,
        declared_tau: usize,
        declared_p: f64,
    ) -> Result<Self> {
        if let ScheduleKind::PeriodicGossip { tau } = kind {
            if tau == 0 {
                return Err(Error::invalid("tau", "period must be >= 1"));
            }
        }
        if declared_tau == 0 {
            return Err(Error::invalid("tau", "declared tau must be >= 1"));
        }
        if graph.n() != gossip.n() {
            return Err(Error::DimensionMismatch(format!(
                "graph has {} nodes, gossip matrix {}",
                graph.n(),
                gossip.n()
            )));
        }
        let identity = MixingMatrix::identity(graph.n());
        Ok(MixingSchedule {
            kind,
            graph,
            gossip,
            identity,
            declared_tau,
            declared_p,
        })
    }

    /// Same schedule with a different declared `(tau, p)`.
    pub fn with_declared(mut self, tau: usize, p: f64) -> Self {
        self.declared_tau = tau;
        self.declared_p = p;
        self
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn gossip_matrix(&self) -> &MixingMatrix {
        &self.gossip
    }

    pub fn declared_tau(&self) -> usize {
        self.declared_tau
    }

    pub fn declared_p(&self) -> f64 {
        self.declared_p
    }

    pub fn is_static(&self) -> bool {
        matches!(self.kind, ScheduleKind::Static)
    }

    /// Mixing matrix for round `t`. Pure function of `(t, seed)`.
    pub fn matrix(&self, t: u64, seed: u64) -> Cow<'_, MixingMatrix> {
        match self.kind {
            ScheduleKind::Static => Cow::Borrowed(&self.gossip),
            ScheduleKind::PeriodicGossip { tau } => {
                if t % tau as u64 == tau as u64 - 1 {
                    Cow::Borrowed(&self.gossip)
                } else {
                    Cow::Borrowed(&self.identity)
                }
            }
            ScheduleKind::IidEdgeSample { keep_prob } => {
                let mut rng = seed::stream(seed, seed::SCHEDULE_TAG, t);
                let kept: Vec<_> = self.graph.edges().filter(|_| rng.random::<f64>() < keep_prob).collect();
                let g = Graph::new(self.graph.n(), kept).expect("subgraph of a valid graph");
                Cow::Owned(metropolis_unchecked(&g))
            }
        }
    }

    /// Product of the `tau` matrices of block `l` in node-row form
    /// (`W^{(l+1)tau-1} ... W^{l tau}`).
    fn block_product(&self, l: u64, tau: usize, seed: u64) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::identity(n, n);
        for s in 0..tau as u64 {
            let w = self.matrix(l * tau as u64 + s, seed);
            m = w.as_dense() * m;
        }
        m
    }
}

/// Monte Carlo estimate of the worst-case expected contraction over blocks of
/// `declared_tau` rounds: `p = 1 - lambda_max(P E[M^T M] P)` with `P` the
/// projector off the consensus direction.
pub fn estimate_consensus_rate(s: &MixingSchedule, draws: usize, seed: u64) -> Result<f64> {
    if draws == 0 {
        return Err(Error::invalid("draws", "need at least one block"));
    }
    let n = s.n();
    let tau = s.declared_tau();
    let mut acc = DMatrix::zeros(n, n);
    for l in 0..draws as u64 {
        let m = s.block_product(l, tau, seed);
        acc += m.transpose() * &m;
    }
    acc /= draws as f64;
    let proj = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    let restricted = &proj * acc * &proj;
    let restricted = (&restricted + restricted.transpose()) * 0.5;
    let lam = SymmetricEigen::new(restricted).eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let p = 1.0 - lam;
    if !(p > 1e-14 && p <= 1.0 + 1e-12) {
        return Err(Error::NoMixing(p));
    }
    Ok(p.min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub trials: usize,
    pub tau: usize,
    pub declared_p: f64,
    /// Monte Carlo estimate of `E ||X W_{l,tau} - Xbar||^2 / ||X - Xbar||^2`.
    pub mean_ratio: f64,
    pub max_ratio: f64,
    /// `(1 - p) * (1 + slack)` plus a rounding floor.
    pub threshold: f64,
    pub slack: f64,
    pub pass: bool,
}

pub const DEFAULT_SLACK: f64 = 0.05;

/// Absorbs floating-point residue of exact averaging, where `1 - p = 0`.
pub const VERIFY_ROUNDING_FLOOR: f64 = 1e-12;

/// Columns of the random test matrices.
const VERIFY_COLUMNS: usize = 4;

pub fn verify_consensus_rate(s: &MixingSchedule, trials: usize, seed: u64) -> Result<ConsensusReport> {
    verify_consensus_rate_with_slack(s, trials, seed, DEFAULT_SLACK)
}

/// Checks the declared rate by applying one block of `declared_tau` rounds
/// (block index = trial index) to a fresh centered Gaussian matrix per trial.
pub fn verify_consensus_rate_with_slack(
    s: &MixingSchedule,
    trials: usize,
    seed: u64,
    slack: f64,
) -> Result<ConsensusReport> {
    if trials == 0 {
        return Err(Error::invalid("trials", "need at least one trial"));
    }
    let p = s.declared_p();
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid("declared_p", format!("must be in (0, 1], got {p}")));
    }
    let n = s.n();
    let d = VERIFY_COLUMNS;
    let tau = s.declared_tau();
    let mut rng = seed::stream(seed, seed::VERIFY_TAG, 0);
    let mut x = vec![0.0; n * d];
    let mut tmp = vec![0.0; n * d];
    let (mut sum, mut max) = (0.0f64, 0.0f64);
    for trial in 0..trials as u64 {
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        center_rows(&mut x, n, d);
        let before = crate::linalg::norm_sq(&x);
        for r in 0..tau as u64 {
            s.matrix(trial * tau as u64 + r, seed).mix_rows(&x, d, &mut tmp);
            std::mem::swap(&mut x, &mut tmp);
        }
        // mixing preserves the (zero) mean, so ||X W - Xbar|| = ||X W||
        center_rows(&mut x, n, d);
        let ratio = crate::linalg::norm_sq(&x) / before;
        sum += ratio;
        max = max.max(ratio);
    }
    let mean_ratio = sum / trials as f64;
    let threshold = (1.0 - p) * (1.0 + slack) + VERIFY_ROUNDING_FLOOR;
    Ok(ConsensusReport {
        trials,
        tau,
        declared_p: p,
        mean_ratio,
        max_ratio: max,
        threshold,
        slack,
        pass: mean_ratio <= threshold,
    })
}

/// Subtracts the node average from every row of a row-major `n x d` buffer.
pub(crate) fn center_rows(x: &mut [f64], n: usize, d: usize) {
    let mut mean = vec![0.0; d];
    for i in 0..n {
        crate::linalg::axpy(1.0 / n as f64, &x[i * d..(i + 1) * d], &mut mean);
    }
    for i in 0..n {
        crate::linalg::axpy(-1.0, &mean, &mut x[i * d..(i + 1) * d]);
    }
}
