//! Communication graphs, consensus weight schedules and a synchronous
//! round-based message-passing simulator with message accounting.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::GraphDoc;

/// Row/column-sum tolerance for stochasticity checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Directed communication graph; edge `(i, j)` means `j` sends to `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommGraph {
    nodes: usize,
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    Path,
    Complete,
    Ring,
    Star,
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(Topology::Path),
            "complete" => Ok(Topology::Complete),
            "ring" => Ok(Topology::Ring),
            "star" => Ok(Topology::Star),
            other => Err(Error::Invalid(format!("unknown topology '{other}'"))),
        }
    }
}

impl CommGraph {
    /// Self-loops are dropped; they are implicit in the weights.
    pub fn new(nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= nodes || j >= nodes {
                return Err(Error::Invalid(format!("edge ({i}, {j}) outside 0..{nodes}")));
            }
            if i != j {
                set.insert((i, j));
            }
        }
        Ok(Self { nodes, edges: set })
    }

    /// Undirected graph from unordered pairs (both directions stored).
    pub fn undirected(nodes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let pairs: Vec<_> = pairs.into_iter().collect();
        Self::new(nodes, pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]))
    }

    pub fn builtin(kind: Topology, nodes: usize) -> Result<Self> {
        let pairs: Vec<(usize, usize)> = match kind {
            Topology::Path => (1..nodes).map(|i| (i - 1, i)).collect(),
            Topology::Complete => (0..nodes)
                .flat_map(|i| ((i + 1)..nodes).map(move |j| (i, j)))
                .collect(),
            Topology::Ring => {
                let mut p: Vec<_> = (1..nodes).map(|i| (i - 1, i)).collect();
                if nodes > 2 {
                    p.push((nodes - 1, 0));
                }
                p
            }
            Topology::Star => (1..nodes).map(|i| (0, i)).collect(),
        };
        Self::undirected(nodes, pairs)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(i, j)| self.edges.contains(&(j, i)))
    }

    /// Nodes sending to `i`.
    pub fn in_neighbors(&self, i: usize) -> Vec<usize> {
        self.edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.in_neighbors(i).len()
    }

    fn reach(&self, from: usize, forward: bool) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.nodes];
        let mut queue = VecDeque::new();
        dist[from] = Some(0);
        queue.push_back(from);
        while let Some(u) = queue.pop_front() {
            for &(i, j) in &self.edges {
                let (a, b) = if forward { (j, i) } else { (i, j) };
                if a == u && dist[b].is_none() {
                    dist[b] = Some(dist[u].unwrap() + 1);
                    queue.push_back(b);
                }
            }
        }
        dist
    }

    /// Every node can reach every other along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        if self.nodes == 0 {
            return false;
        }
        self.reach(0, true).iter().all(|d| d.is_some())
            && self.reach(0, false).iter().all(|d| d.is_some())
    }

    /// Longest shortest path (in hops); `None` when not strongly connected.
    pub fn diameter(&self) -> Option<usize> {
        if !self.is_strongly_connected() {
            return None;
        }
        (0..self.nodes)
            .map(|s| self.reach(s, true).into_iter().map(|d| d.unwrap()).max().unwrap_or(0))
            .max()
    }

    pub fn to_doc(&self) -> GraphDoc {
        GraphDoc {
            nodes: self.nodes,
            edges: self.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }

    pub fn from_doc(doc: &GraphDoc) -> Result<Self> {
        Self::new(doc.nodes, doc.edges.iter().map(|e| (e[0], e[1])))
    }
}

/// Sequence of consensus weight matrices, constant, periodic or finite.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    mats: Vec<Mat>,
    periodic: bool,
    doubly: bool,
}

impl WeightSchedule {
    pub fn constant(gamma: Mat) -> Result<Self> {
        Self::build(vec![gamma], true)
    }

    pub fn periodic(mats: Vec<Mat>) -> Result<Self> {
        Self::build(mats, true)
    }

    pub fn finite(mats: Vec<Mat>) -> Result<Self> {
        Self::build(mats, false)
    }

    fn build(mats: Vec<Mat>, periodic: bool) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::Invalid("weight schedule is empty".into()))?;
        let m = first.nrows();
        let mut doubly = true;
        for g in &mats {
            if g.nrows() != m || g.ncols() != m {
                return Err(dim_err("weight matrix size", m, g.nrows().max(g.ncols())));
            }
            if g.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::Invalid("weights must be nonnegative".into()));
            }
            for i in 0..m {
                if (g.row(i).sum() - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::Invalid(format!("row {i} of a weight matrix does not sum to 1")));
                }
                if (g.column(i).sum() - 1.0).abs() > STOCHASTIC_TOL {
                    doubly = false;
                }
            }
        }
        Ok(Self {
            mats,
            periodic,
            doubly,
        })
    }

    pub fn nodes(&self) -> usize {
        self.mats[0].nrows()
    }

    pub fn period(&self) -> usize {
        self.mats.len()
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn is_constant(&self) -> bool {
        self.periodic && self.mats.len() == 1
    }

    /// All matrices are column-stochastic as well.
    pub fn is_doubly_stochastic(&self) -> bool {
        self.doubly
    }

    pub fn at(&self, k: usize) -> Result<&Mat> {
        if self.periodic {
            Ok(&self.mats[k % self.mats.len()])
        } else {
            self.mats.get(k).ok_or(Error::ScheduleExhausted {
                round: k,
                len: self.mats.len(),
            })
        }
    }

    /// Communication graph used in round `k` (positive off-diagonal weights).
    pub fn graph_at(&self, k: usize) -> Result<CommGraph> {
        let g = self.at(k)?;
        let m = g.nrows();
        CommGraph::new(
            m,
            (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| i != j && g[(i, j)] > 0.0),
        )
    }

    /// Union of the round graphs over one period (or the whole finite list).
    pub fn persistent_graph(&self) -> CommGraph {
        let m = self.nodes();
        let mut edges = BTreeSet::new();
        for k in 0..self.mats.len() {
            edges.extend(self.graph_at(k).expect("index within schedule").edges());
        }
        CommGraph { nodes: m, edges }
    }
}

/// Metropolis-Hastings weights `1 / (1 + max(deg i, deg j))` on an undirected graph.
pub fn metropolis_weights(graph: &CommGraph) -> Result<WeightSchedule> {
    if !graph.is_symmetric() {
        return Err(Error::Invalid("Metropolis weights need a symmetric edge set".into()));
    }
    let m = graph.nodes();
    if m == 0 {
        return Err(Error::Invalid("graph has no nodes".into()));
    }
    let deg: Vec<usize> = (0..m).map(|i| graph.degree(i)).collect();
    let mut g = Mat::zeros(m, m);
    for (i, j) in graph.edges() {
        g[(i, j)] = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| g[(i, j)]).sum();
        g[(i, i)] = 1.0 - off;
    }
    WeightSchedule::constant(g)
}

/// Scalars transmitted per round.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLedger {
    per_round: Vec<u64>,
    total: u64,
}

impl RoundLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one round in which `scalars` values crossed the network.
    pub fn credit(&mut self, scalars: u64) {
        self.per_round.push(scalars);
        self.total += scalars;
    }

    pub fn rounds(&self) -> usize {
        self.per_round.len()
    }

    pub fn per_round(&self) -> &[u64] {
        &self.per_round
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

fn check_states(m: usize, states: &[Vector]) -> Result<usize> {
    if states.len() != m {
        return Err(dim_err("number of agent states", m, states.len()));
    }
    let n = states[0].len();
    if states.iter().any(|s| s.len() != n) {
        return Err(Error::Dimension("agent states differ in length".into()));
    }
    Ok(n)
}

/// Combine states with a weight matrix, summing in agent-index order.
pub(crate) fn mix(gamma: &Mat, states: &[Vector]) -> Vec<Vector> {
    let m = gamma.nrows();
    let n = states[0].len();
    crate::parallel::map_indexed(m, |i| {
        let mut out = Vector::zeros(n);
        for (j, s) in states.iter().enumerate() {
            let w = gamma[(i, j)];
            if w != 0.0 {
                out.axpy(w, s, 1.0);
            }
        }
        out
    })
}

/// Scalars sent in one round with weight matrix `gamma` on `dim`-vectors.
pub fn round_messages(gamma: &Mat, dim: usize) -> u64 {
    let m = gamma.nrows();
    let links = (0..m)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j && gamma[(i, j)] > 0.0)
        .count();
    (links * dim) as u64
}

/// One synchronous consensus round `x^i <- sum_j gamma_k^{ij} x^j`.
pub fn consensus_round(
    schedule: &WeightSchedule,
    k: usize,
    states: &[Vector],
    ledger: &mut RoundLedger,
) -> Result<Vec<Vector>> {
    let gamma = schedule.at(k)?;
    let n = check_states(gamma.nrows(), states)?;
    let out = mix(gamma, states);
    ledger.credit(round_messages(gamma, n));
    Ok(out)
}

/// `Gamma^mu` for a constant schedule; `mu = 0` gives the identity.
pub fn power_weights(schedule: &WeightSchedule, mu: usize) -> Result<Mat> {
    if !schedule.is_constant() {
        return Err(Error::Incompatible("matrix powers need a constant schedule".into()));
    }
    let g = schedule.at(0)?;
    let mut out = Mat::identity(g.nrows(), g.ncols());
    for _ in 0..mu {
        out = &out * g;
    }
    Ok(out)
}

/// True iff the union graph of every `tau` consecutive rounds is strongly connected.
///
/// Periodic schedules check every window start within one period; finite
/// schedules check every window that fits.
pub fn check_joint_connectivity(schedule: &WeightSchedule, tau: usize) -> bool {
    let m = schedule.nodes();
    if tau == 0 || m == 0 {
        return false;
    }
    let period = schedule.period();
    let starts = if schedule.is_periodic() {
        period
    } else if tau <= period {
        period - tau + 1
    } else {
        return false;
    };
    (0..starts).all(|s| {
        let mut edges = BTreeSet::new();
        for k in s..s + tau {
            edges.extend(schedule.graph_at(k).expect("window inside schedule").edges());
        }
        CommGraph { nodes: m, edges }.is_strongly_connected()
    })
}

/// `max_{i,j} ||x^i - x^j||`.
pub fn disagreement(states: &[Vector]) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..states.len() {
        for j in (i + 1)..states.len() {
            worst = worst.max((&states[i] - &states[j]).norm());
        }
    }
    worst
}

pub fn average(states: &[Vector]) -> Vector {
    let mut acc = Vector::zeros(states[0].len());
    for s in states {
        acc += s;
    }
    acc / states.len() as f64
}
