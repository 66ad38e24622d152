//! Directed probabilistic graphs.
//!
//! A [`Graph`] is immutable once built. Every edge carries an independent
//! influence probability; forward and reverse adjacency lists are kept as
//! exact transposes of each other so that forward diffusion and reverse
//! sampling can both walk the graph without searching.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use rand::Rng;
use thiserror::Error;

/// Dense 0-based node identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(i as u32)
    }
}

/// Index into [`Graph::edges`].
pub type EdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub prob: f64,
}

/// One adjacency entry: the neighbor on the other end, the edge probability
/// and the id of the underlying edge (shared by both directions).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adj {
    pub node: NodeId,
    pub prob: f64,
    pub edge: EdgeId,
}

/// How edge probabilities are assigned when loading an edge list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightMode {
    /// The third column of each line is the probability.
    Explicit,
    /// Every edge into `v` gets probability `1 / indegree(v)`.
    WeightedCascade,
}

impl std::str::FromStr for WeightMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(WeightMode::Explicit),
            "weighted-cascade" | "wc" => Ok(WeightMode::WeightedCascade),
            other => Err(format!("unknown weight mode `{other}`")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("edge ({src},{dst}): prob out of range: {prob}")]
    ProbOutOfRange { src: usize, dst: usize, prob: f64 },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0},{1})")]
    DuplicateEdge(usize, usize),
    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("io error: {0}")]
    Io(String),
}

/// A structural problem found by [`Graph::validate`].
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    ProbOutOfRange { edge: EdgeId, prob: f64 },
    SelfLoop { edge: EdgeId },
    DuplicateEdge { src: NodeId, dst: NodeId },
    NodeOutOfRange { edge: EdgeId },
    AdjacencyMismatch { node: NodeId, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::ProbOutOfRange { edge, prob } => {
                write!(f, "edge {edge}: probability {prob} outside [0,1]")
            }
            Violation::SelfLoop { edge } => write!(f, "edge {edge}: self-loop"),
            Violation::DuplicateEdge { src, dst } => write!(f, "duplicate edge ({src},{dst})"),
            Violation::NodeOutOfRange { edge } => write!(f, "edge {edge}: endpoint out of range"),
            Violation::AdjacencyMismatch { node, detail } => {
                write!(f, "node {node}: adjacency mismatch ({detail})")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Graph {
    pub(crate) n: usize,
    pub(crate) edges: Vec<Edge>,
    pub(crate) out_adj: Vec<Vec<Adj>>,
    pub(crate) in_adj: Vec<Vec<Adj>>,
    pub(crate) labels: Vec<String>,
}

impl Graph {
    /// Builds a graph over nodes `0..n`. Rejects self-loops, parallel edges
    /// and probabilities outside `[0,1]`.
    pub fn from_edges(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Graph, GraphError> {
        let mut seen = HashSet::new();
        let mut list = Vec::new();
        for (src, dst, prob) in edges {
            for node in [src, dst] {
                if node >= n {
                    return Err(GraphError::NodeOutOfRange { node, n });
                }
            }
            if src == dst {
                return Err(GraphError::SelfLoop(src));
            }
            if !(0.0..=1.0).contains(&prob) {
                return Err(GraphError::ProbOutOfRange { src, dst, prob });
            }
            if !seen.insert((src, dst)) {
                return Err(GraphError::DuplicateEdge(src, dst));
            }
            list.push(Edge {
                src: src.into(),
                dst: dst.into(),
                prob,
            });
        }
        Ok(Self::assemble(
            n,
            list,
            (0..n).map(|i| i.to_string()).collect(),
        ))
    }

    /// Builds a graph whose probabilities follow the weighted-cascade
    /// convention `p(u,v) = 1/indegree(v)`.
    pub fn weighted_cascade(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Graph, GraphError> {
        let pairs: Vec<(usize, usize)> = edges.into_iter().collect();
        let mut indeg = vec![0usize; n];
        for &(_, d) in &pairs {
            if d < n {
                indeg[d] += 1;
            }
        }
        Self::from_edges(
            n,
            pairs
                .into_iter()
                .map(|(s, d)| (s, d, if d < n { 1.0 / indeg[d] as f64 } else { 0.0 })),
        )
    }

    fn assemble(n: usize, edges: Vec<Edge>, labels: Vec<String>) -> Graph {
        let mut out_adj = vec![Vec::new(); n];
        let mut in_adj = vec![Vec::new(); n];
        for (id, e) in edges.iter().enumerate() {
            out_adj[e.src.index()].push(Adj {
                node: e.dst,
                prob: e.prob,
                edge: id,
            });
            in_adj[e.dst.index()].push(Adj {
                node: e.src,
                prob: e.prob,
                edge: id,
            });
        }
        Graph {
            n,
            edges,
            out_adj,
            in_adj,
            labels,
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    #[inline]
    pub fn out_neighbors(&self, v: NodeId) -> &[Adj] {
        &self.out_adj[v.index()]
    }

    #[inline]
    pub fn in_neighbors(&self, v: NodeId) -> &[Adj] {
        &self.in_adj[v.index()]
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.n).map(NodeId::from)
    }

    /// Original label of a node (the token used in the input file).
    pub fn label(&self, v: NodeId) -> &str {
        &self.labels[v.index()]
    }

    /// Node id for an input label, if present.
    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(NodeId::from)
    }

    /// `(dense id, original label)` pairs.
    pub fn label_mapping(&self) -> impl Iterator<Item = (NodeId, &str)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| (NodeId::from(i), l.as_str()))
    }

    /// Checks every structural invariant and reports all violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for (id, e) in self.edges.iter().enumerate() {
            if e.src.index() >= self.n || e.dst.index() >= self.n {
                out.push(Violation::NodeOutOfRange { edge: id });
                continue;
            }
            if !(0.0..=1.0).contains(&e.prob) {
                out.push(Violation::ProbOutOfRange {
                    edge: id,
                    prob: e.prob,
                });
            }
            if e.src == e.dst {
                out.push(Violation::SelfLoop { edge: id });
            }
            if !seen.insert((e.src, e.dst)) {
                out.push(Violation::DuplicateEdge {
                    src: e.src,
                    dst: e.dst,
                });
            }
        }

        // Expected adjacency, derived from the edge list, versus the stored one.
        let mut expect_out: HashMap<(NodeId, EdgeId), (NodeId, u64)> = HashMap::new();
        let mut expect_in: HashMap<(NodeId, EdgeId), (NodeId, u64)> = HashMap::new();
        for (id, e) in self.edges.iter().enumerate() {
            expect_out.insert((e.src, id), (e.dst, e.prob.to_bits()));
            expect_in.insert((e.dst, id), (e.src, e.prob.to_bits()));
        }
        let check = |adj: &Vec<Vec<Adj>>,
                     expect: &mut HashMap<(NodeId, EdgeId), (NodeId, u64)>,
                     dir: &str,
                     out: &mut Vec<Violation>| {
            if adj.len() != self.n {
                out.push(Violation::AdjacencyMismatch {
                    node: NodeId(0),
                    detail: format!("{dir} list count {} != n {}", adj.len(), self.n),
                });
                return;
            }
            for (v, list) in adj.iter().enumerate() {
                let v = NodeId::from(v);
                for a in list {
                    match expect.remove(&(v, a.edge)) {
                        Some((node, bits)) if node == a.node && bits == a.prob.to_bits() => {}
                        _ => out.push(Violation::AdjacencyMismatch {
                            node: v,
                            detail: format!(
                                "unexpected {dir} entry to {} via edge {}",
                                a.node, a.edge
                            ),
                        }),
                    }
                }
            }
            let mut missing: Vec<_> = expect.drain().collect();
            missing.sort_by_key(|((v, e), _)| (*v, *e));
            for ((v, e), _) in missing {
                out.push(Violation::AdjacencyMismatch {
                    node: v,
                    detail: format!("missing {dir} entry for edge {e}"),
                });
            }
        };
        check(&self.out_adj, &mut expect_out, "out", &mut out);
        check(&self.in_adj, &mut expect_in, "in", &mut out);
        out
    }
}

/// Parses a whitespace-separated edge list.
///
/// Blank lines and lines starting with `#` are skipped. Node tokens are
/// arbitrary strings remapped to dense ids in order of first appearance.
pub fn load_graph<R: BufRead>(source: R, mode: WeightMode) -> Result<Graph, GraphError> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut raw: Vec<(usize, usize, f64)> = Vec::new();
    let mut seen = HashSet::new();

    let mut intern = |tok: &str, labels: &mut Vec<String>| -> usize {
        if let Some(&id) = ids.get(tok) {
            return id;
        }
        let id = labels.len();
        ids.insert(tok.to_owned(), id);
        labels.push(tok.to_owned());
        id
    };

    for (lineno, line) in source.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.map_err(|e| GraphError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |reason: String| GraphError::Parse {
            line: line_no,
            reason,
        };
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        let prob = match (mode, toks.len()) {
            (WeightMode::Explicit, 3) => {
                let p: f64 = toks[2]
                    .parse()
                    .map_err(|_| parse_err(format!("bad probability `{}`", toks[2])))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(parse_err(format!("prob out of range: {p}")));
                }
                p
            }
            (WeightMode::Explicit, k) => {
                return Err(parse_err(format!(
                    "expected `src dst prob`, found {k} fields"
                )))
            }
            (WeightMode::WeightedCascade, 2) => f64::NAN,
            (WeightMode::WeightedCascade, k) => {
                return Err(parse_err(format!("expected `src dst`, found {k} fields")))
            }
        };
        let src = intern(toks[0], &mut labels);
        let dst = intern(toks[1], &mut labels);
        if src == dst {
            return Err(parse_err(format!("self-loop on `{}`", toks[0])));
        }
        if !seen.insert((src, dst)) {
            return Err(parse_err(format!(
                "duplicate edge `{} {}`",
                toks[0], toks[1]
            )));
        }
        raw.push((src, dst, prob));
    }

    let n = labels.len();
    if mode == WeightMode::WeightedCascade {
        let mut indeg = vec![0usize; n];
        for &(_, d, _) in &raw {
            indeg[d] += 1;
        }
        for e in &mut raw {
            e.2 = 1.0 / indeg[e.1] as f64;
        }
    }
    let edges = raw
        .into_iter()
        .map(|(s, d, p)| Edge {
            src: s.into(),
            dst: d.into(),
            prob: p,
        })
        .collect();
    Ok(Graph::assemble(n, edges, labels))
}

/// Uniform random directed graph with `m` distinct non-loop edges and
/// weighted-cascade probabilities.
pub fn random_wc_graph<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Graph {
    assert!(n >= 2 || m == 0, "need at least two nodes for edges");
    assert!(m <= n * n.saturating_sub(1), "too many edges requested");
    let mut seen = HashSet::with_capacity(m);
    let mut pairs = Vec::with_capacity(m);
    while pairs.len() < m {
        let s = rng.random_range(0..n);
        let d = rng.random_range(0..n);
        if s != d && seen.insert((s, d)) {
            pairs.push((s, d));
        }
    }
    Graph::weighted_cascade(n, pairs).expect("generated edges are valid")
}
