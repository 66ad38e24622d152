//! Utility-driven independent cascade diffusion.
//!
//! A diffusion runs in synchronous rounds over one possible world: an edge
//! world deciding which edges are live and a noise world fixing every item's
//! noise term. In round 1 each seed desires the items allocated to it and
//! adopts its best subset. In every later round, a node whose live
//! in-neighbor adopted something new in the previous round adds that
//! neighbor's adoption set to its desire set and re-optimizes, keeping
//! everything it already adopted. The process stops once no adoption set
//! changes.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::graph::{EdgeId, Graph, NodeId};
use crate::items::{ItemSet, ModelError, NoiseWorld, UtilityModel};

#[derive(Debug, Error, PartialEq)]
pub enum DiffusionError {
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("diffusion exceeded the round bound of {0}")]
    RoundBound(usize),
    #[error("at least one Monte-Carlo run is required")]
    NoRuns,
}

/// Live/blocked status of edges, decided at most once per edge.
pub trait EdgeStatus {
    fn is_live(&mut self, g: &Graph, edge: EdgeId) -> bool;
}

/// Fully materialized edge world.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeWorld {
    live: Vec<bool>,
}

impl EdgeWorld {
    pub fn from_live(live: Vec<bool>) -> Self {
        EdgeWorld { live }
    }

    pub fn all_live(g: &Graph) -> Self {
        EdgeWorld {
            live: vec![true; g.num_edges()],
        }
    }

    pub fn live(&self) -> &[bool] {
        &self.live
    }

    #[inline]
    pub fn get(&self, edge: EdgeId) -> bool {
        self.live[edge]
    }
}

impl EdgeStatus for EdgeWorld {
    #[inline]
    fn is_live(&mut self, _g: &Graph, edge: EdgeId) -> bool {
        self.live[edge]
    }
}

impl EdgeStatus for &EdgeWorld {
    #[inline]
    fn is_live(&mut self, _g: &Graph, edge: EdgeId) -> bool {
        self.live[edge]
    }
}

/// Samples every edge independently with its probability.
pub fn sample_edge_world<R: Rng + ?Sized>(g: &Graph, rng: &mut R) -> EdgeWorld {
    EdgeWorld {
        live: g.edges().iter().map(|e| flip(rng, e.prob)).collect(),
    }
}

#[inline]
fn flip<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    if p >= 1.0 {
        true
    } else if p <= 0.0 {
        false
    } else {
        rng.random::<f64>() < p
    }
}

/// Edge world whose coins are flipped on first test and remembered.
pub struct LazyEdgeWorld<R> {
    state: Vec<u8>,
    rng: R,
}

impl<R: Rng> LazyEdgeWorld<R> {
    pub fn new(g: &Graph, rng: R) -> Self {
        LazyEdgeWorld {
            state: vec![0; g.num_edges()],
            rng,
        }
    }

    /// Number of edges whose coin has been flipped so far.
    pub fn tested(&self) -> usize {
        self.state.iter().filter(|&&s| s != 0).count()
    }
}

impl<R: Rng> EdgeStatus for LazyEdgeWorld<R> {
    #[inline]
    fn is_live(&mut self, g: &Graph, edge: EdgeId) -> bool {
        match self.state[edge] {
            1 => true,
            2 => false,
            _ => {
                let live = flip(&mut self.rng, g.edges()[edge].prob);
                self.state[edge] = if live { 1 } else { 2 };
                live
            }
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("item {item} outside universe of {s} items")]
    ItemOutOfRange { item: usize, s: usize },
    #[error("budget of item {item} ({budget}) exhausted")]
    OverBudget { item: usize, budget: usize },
}

/// A set of `(node, item)` seed assignments under a per-item budget.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Allocation {
    pairs: BTreeSet<(NodeId, usize)>,
    budgets: Vec<usize>,
}

impl Allocation {
    pub fn new(budgets: Vec<usize>) -> Self {
        Allocation {
            pairs: BTreeSet::new(),
            budgets,
        }
    }

    /// Builds an allocation without any budget check. Used to load external
    /// files and to exercise validation.
    pub fn from_pairs_unchecked(
        budgets: Vec<usize>,
        pairs: impl IntoIterator<Item = (NodeId, usize)>,
    ) -> Self {
        Allocation {
            pairs: pairs.into_iter().collect(),
            budgets,
        }
    }

    /// Builds an allocation from one seed list per item.
    pub fn from_seed_sets(
        budgets: Vec<usize>,
        seeds: &[Vec<NodeId>],
    ) -> Result<Self, AllocationError> {
        let mut a = Allocation::new(budgets);
        for (item, list) in seeds.iter().enumerate() {
            for &v in list {
                a.insert(v, item)?;
            }
        }
        Ok(a)
    }

    /// Adds a pair; returns false if it was already present.
    pub fn insert(&mut self, v: NodeId, item: usize) -> Result<bool, AllocationError> {
        if item >= self.budgets.len() {
            return Err(AllocationError::ItemOutOfRange {
                item,
                s: self.budgets.len(),
            });
        }
        if self.pairs.contains(&(v, item)) {
            return Ok(false);
        }
        if self.seed_count(item) >= self.budgets[item] {
            return Err(AllocationError::OverBudget {
                item,
                budget: self.budgets[item],
            });
        }
        Ok(self.pairs.insert((v, item)))
    }

    pub fn budgets(&self) -> &[usize] {
        &self.budgets
    }

    pub fn num_items(&self) -> usize {
        self.budgets.len()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, v: NodeId, item: usize) -> bool {
        self.pairs.contains(&(v, item))
    }

    pub fn seed_count(&self, item: usize) -> usize {
        self.pairs.iter().filter(|&&(_, i)| i == item).count()
    }

    /// Seeds of one item in ascending node order.
    pub fn seeds_of(&self, item: usize) -> Vec<NodeId> {
        self.pairs
            .iter()
            .filter(|&&(_, i)| i == item)
            .map(|&(v, _)| v)
            .collect()
    }

    /// Items allocated to each seed node, in ascending node order.
    pub fn seed_items(&self) -> Vec<(NodeId, ItemSet)> {
        let mut out: Vec<(NodeId, ItemSet)> = Vec::new();
        for &(v, i) in &self.pairs {
            match out.last_mut() {
                Some((u, set)) if *u == v => *set = set.with(i),
                _ => out.push((v, ItemSet::singleton(i))),
            }
        }
        out
    }
}

/// Order in which a round's nodes are processed. The outcome does not
/// depend on it: desire sets are unions and adoption is decided per node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ProcessingOrder {
    #[default]
    Discovery,
    Ascending,
    Descending,
    Shuffled(u64),
}

impl ProcessingOrder {
    fn arrange(self, nodes: &mut [NodeId], round: usize) {
        match self {
            ProcessingOrder::Discovery => {}
            ProcessingOrder::Ascending => nodes.sort_unstable(),
            ProcessingOrder::Descending => nodes.sort_unstable_by(|a, b| b.cmp(a)),
            ProcessingOrder::Shuffled(seed) => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                );
                nodes.shuffle(&mut rng);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionOutcome {
    pub desire: Vec<ItemSet>,
    pub adoption: Vec<ItemSet>,
    /// Rounds executed: the seeding round plus every propagation round in
    /// which some adoption set changed.
    pub steps: usize,
}

/// Desire and adoption sets of every node after one round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundSnapshot {
    pub desire: Vec<ItemSet>,
    pub adoption: Vec<ItemSet>,
}

fn check_allocation(g: &Graph, m: &UtilityModel, alloc: &Allocation) -> Result<(), DiffusionError> {
    for (v, i) in alloc.pairs() {
        if v.index() >= g.num_nodes() {
            return Err(DiffusionError::InvalidAllocation(format!(
                "node {v} outside graph of {} nodes",
                g.num_nodes()
            )));
        }
        if i >= m.num_items() {
            return Err(DiffusionError::InvalidAllocation(format!(
                "item {i} outside universe of {} items",
                m.num_items()
            )));
        }
    }
    Ok(())
}

/// Runs one diffusion in the given possible world.
pub fn diffuse<E: EdgeStatus>(
    g: &Graph,
    ew: &mut E,
    m: &UtilityModel,
    w: &NoiseWorld,
    alloc: &Allocation,
) -> Result<DiffusionOutcome, DiffusionError> {
    run(g, ew, m, w, alloc, ProcessingOrder::Discovery, None)
}

/// [`diffuse`] with an explicit per-round processing order.
pub fn diffuse_ordered<E: EdgeStatus>(
    g: &Graph,
    ew: &mut E,
    m: &UtilityModel,
    w: &NoiseWorld,
    alloc: &Allocation,
    order: ProcessingOrder,
) -> Result<DiffusionOutcome, DiffusionError> {
    run(g, ew, m, w, alloc, order, None)
}

/// [`diffuse`] that also records a snapshot after every round.
pub fn diffuse_traced<E: EdgeStatus>(
    g: &Graph,
    ew: &mut E,
    m: &UtilityModel,
    w: &NoiseWorld,
    alloc: &Allocation,
) -> Result<(DiffusionOutcome, Vec<RoundSnapshot>), DiffusionError> {
    let mut trace = Vec::new();
    let out = run(
        g,
        ew,
        m,
        w,
        alloc,
        ProcessingOrder::Discovery,
        Some(&mut trace),
    )?;
    Ok((out, trace))
}

fn run<E: EdgeStatus>(
    g: &Graph,
    ew: &mut E,
    m: &UtilityModel,
    w: &NoiseWorld,
    alloc: &Allocation,
    order: ProcessingOrder,
    mut trace: Option<&mut Vec<RoundSnapshot>>,
) -> Result<DiffusionOutcome, DiffusionError> {
    check_allocation(g, m, alloc)?;
    let n = g.num_nodes();
    let bound = (n * m.num_items()).max(1);
    let mut desire = vec![ItemSet::EMPTY; n];
    let mut adoption = vec![ItemSet::EMPTY; n];

    let seeds = alloc.seed_items();
    let mut frontier: Vec<NodeId> = seeds.iter().map(|&(v, _)| v).collect();
    order.arrange(&mut frontier, 0);
    for (v, items) in seeds {
        desire[v.index()] = items;
    }
    // Seeds that adopt nothing keep their desire set but do not spread.
    let mut adopted_now = Vec::with_capacity(frontier.len());
    for &v in &frontier {
        let a = m.best_adoption(w, desire[v.index()], ItemSet::EMPTY)?;
        adoption[v.index()] = a;
        if !a.is_empty() {
            adopted_now.push(v);
        }
    }
    frontier = adopted_now;
    let mut steps = 1;
    if let Some(t) = trace.as_deref_mut() {
        t.push(RoundSnapshot {
            desire: desire.clone(),
            adoption: adoption.clone(),
        });
    }

    let mut incoming = vec![ItemSet::EMPTY; n];
    let mut touched: Vec<NodeId> = Vec::new();
    let mut round = 1;
    while !frontier.is_empty() {
        round += 1;
        for &u in &frontier {
            let offer = adoption[u.index()];
            for adj in g.out_neighbors(u) {
                if ew.is_live(g, adj.edge) {
                    let slot = &mut incoming[adj.node.index()];
                    if slot.is_empty() {
                        touched.push(adj.node);
                    }
                    *slot = slot.union(offer);
                }
            }
        }
        order.arrange(&mut touched, round);
        let mut next = Vec::new();
        for &v in &touched {
            let vi = v.index();
            desire[vi] = desire[vi].union(incoming[vi]);
            incoming[vi] = ItemSet::EMPTY;
            let a = m.best_adoption(w, desire[vi], adoption[vi])?;
            if a != adoption[vi] {
                adoption[vi] = a;
                next.push(v);
            }
        }
        touched.clear();
        if !next.is_empty() {
            steps += 1;
            if steps > bound {
                return Err(DiffusionError::RoundBound(bound));
            }
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(RoundSnapshot {
                desire: desire.clone(),
                adoption: adoption.clone(),
            });
        }
        frontier = next;
    }
    Ok(DiffusionOutcome {
        desire,
        adoption,
        steps,
    })
}

/// Sum over nodes of the utility of their final adoption set.
pub fn welfare_of_outcome(outcome: &DiffusionOutcome, m: &UtilityModel, w: &NoiseWorld) -> f64 {
    outcome
        .adoption
        .iter()
        .filter(|a| !a.is_empty())
        .map(|&a| m.utility(w, a))
        .sum()
}

/// Nodes reachable from `seeds` over live edges, in ascending order.
pub fn reachable_set<E: EdgeStatus>(g: &Graph, ew: &mut E, seeds: &[NodeId]) -> Vec<NodeId> {
    let mut seen = vec![false; g.num_nodes()];
    let mut stack: Vec<NodeId> = Vec::new();
    for &s in seeds {
        if !seen[s.index()] {
            seen[s.index()] = true;
            stack.push(s);
        }
    }
    while let Some(u) = stack.pop() {
        for adj in g.out_neighbors(u) {
            if !seen[adj.node.index()] && ew.is_live(g, adj.edge) {
                seen[adj.node.index()] = true;
                stack.push(adj.node);
            }
        }
    }
    seen.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| NodeId::from(i))
        .collect()
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub runs: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Estimate {
        let runs = xs.len();
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let stderr = if runs > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
            (var / runs as f64).sqrt()
        } else {
            0.0
        };
        Estimate { mean, stderr, runs }
    }
}

/// Generator for run `index` of a Monte-Carlo experiment seeded with `seed`.
/// Streams depend only on `(seed, index)`, never on the worker layout.
pub fn run_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Expected social welfare of `alloc`, estimated over `mc_runs` independent
/// possible worlds. With `fixed_noise` only edge worlds are sampled.
pub fn estimate_welfare(
    g: &Graph,
    m: &UtilityModel,
    alloc: &Allocation,
    mc_runs: usize,
    seed: u64,
    fixed_noise: Option<&NoiseWorld>,
) -> Result<Estimate, DiffusionError> {
    if mc_runs == 0 {
        return Err(DiffusionError::NoRuns);
    }
    check_allocation(g, m, alloc)?;
    let samples: Vec<f64> = (0..mc_runs as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = run_rng(seed, r);
            let w = match fixed_noise {
                Some(w) => w.clone(),
                None => m.sample_noise_world(&mut rng),
            };
            let mut ew = LazyEdgeWorld::new(g, rng);
            let out = diffuse(g, &mut ew, m, &w, alloc)?;
            Ok(welfare_of_outcome(&out, m, &w))
        })
        .collect::<Result<_, DiffusionError>>()?;
    Ok(Estimate::from_samples(&samples))
}

/// Expected number of nodes activated by `seeds` under the IC model.
pub fn estimate_spread(
    g: &Graph,
    seeds: &[NodeId],
    mc_runs: usize,
    seed: u64,
) -> Result<Estimate, DiffusionError> {
    if mc_runs == 0 {
        return Err(DiffusionError::NoRuns);
    }
    let samples: Vec<f64> = (0..mc_runs as u64)
        .into_par_iter()
        .map_init(
            || (vec![false; g.num_nodes()], Vec::new(), Vec::new()),
            |(seen, stack, visited), r| {
                let mut rng = run_rng(seed, r);
                ic_cascade_size(g, seeds, &mut rng, seen, stack, visited) as f64
            },
        )
        .collect();
    Ok(Estimate::from_samples(&samples))
}

/// One forward IC cascade; every edge is tested at most once because each
/// node is expanded at most once.
pub(crate) fn ic_cascade_size<R: Rng + ?Sized>(
    g: &Graph,
    seeds: &[NodeId],
    rng: &mut R,
    seen: &mut [bool],
    stack: &mut Vec<NodeId>,
    visited: &mut Vec<NodeId>,
) -> usize {
    for &s in seeds {
        if !seen[s.index()] {
            seen[s.index()] = true;
            stack.push(s);
            visited.push(s);
        }
    }
    while let Some(u) = stack.pop() {
        for adj in g.out_neighbors(u) {
            if !seen[adj.node.index()] && flip(rng, adj.prob) {
                seen[adj.node.index()] = true;
                stack.push(adj.node);
                visited.push(adj.node);
            }
        }
    }
    let size = visited.len();
    for v in visited.drain(..) {
        seen[v.index()] = false;
    }
    size
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::items::fixtures::example_block_model;
    use crate::items::{build_additive, NoiseSpec};

    fn set(items: &[usize]) -> ItemSet {
        items.iter().fold(ItemSet::EMPTY, |s, &i| s.with(i - 1))
    }

    #[test]
    fn edge_world_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ones = Graph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert!(sample_edge_world(&ones, &mut rng).live().iter().all(|&b| b));
        let zeros = Graph::from_edges(3, [(0, 1, 0.0), (1, 2, 0.0)]).unwrap();
        assert!(sample_edge_world(&zeros, &mut rng)
            .live()
            .iter()
            .all(|&b| !b));
        let half = Graph::from_edges(3, [(0, 1, 0.5), (1, 2, 0.5), (2, 0, 0.5)]).unwrap();
        let runs = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..runs {
            let w = sample_edge_world(&half, &mut rng);
            for (c, &l) in counts.iter_mut().zip(w.live()) {
                *c += l as usize;
            }
        }
        for c in counts {
            assert!((c as f64 / runs as f64 - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn lazy_world_memoizes() {
        let g = Graph::from_edges(2, [(0, 1, 0.5)]).unwrap();
        let mut ew = LazyEdgeWorld::new(&g, ChaCha8Rng::seed_from_u64(1));
        assert_eq!(ew.tested(), 0);
        let first = ew.is_live(&g, 0);
        for _ in 0..100 {
            assert_eq!(ew.is_live(&g, 0), first);
        }
        assert_eq!(ew.tested(), 1);
    }

    /// v1 seeded with i1 (utility 1), v3 seeded with i2 (utility -1 alone,
    /// bundle utility 1); edge v1->v3 blocked, v1->v2 and v2->v3 live.
    fn propagation_figure() -> (Graph, EdgeWorld, UtilityModel, Allocation) {
        let g = Graph::from_edges(3, [(0, 2, 0.5), (0, 1, 0.5), (1, 2, 0.5)]).unwrap();
        let ew = EdgeWorld::from_live(vec![false, true, true]);
        let m = UtilityModel::new(
            vec!["i1".into(), "i2".into()],
            vec![0.0, 2.0, 1.0, 4.0],
            vec![1.0, 2.0],
            vec![NoiseSpec::Zero; 2],
            true,
        )
        .unwrap();
        let alloc =
            Allocation::from_seed_sets(vec![1, 1], &[vec![NodeId(0)], vec![NodeId(2)]]).unwrap();
        (g, ew, m, alloc)
    }

    #[test]
    fn propagation_figure_scenario() {
        let (g, mut ew, m, alloc) = propagation_figure();
        let w = NoiseWorld::zero(2);
        let out = diffuse(&g, &mut ew, &m, &w, &alloc).unwrap();
        assert_eq!(out.adoption, vec![set(&[1]), set(&[1]), set(&[1, 2])]);
        assert_eq!(out.desire[2], set(&[1, 2]));
        assert_eq!(out.steps, 3);
        // Every adopter gets utility 1.
        assert_eq!(welfare_of_outcome(&out, &m, &w), 3.0);
    }

    #[test]
    fn trivial_diffusions() {
        let (g, mut ew, m, _) = propagation_figure();
        let w = NoiseWorld::zero(2);
        let out = diffuse(&g, &mut ew, &m, &w, &Allocation::new(vec![1, 1])).unwrap();
        assert!(out.adoption.iter().all(|a| a.is_empty()));
        assert_eq!(welfare_of_outcome(&out, &m, &w), 0.0);

        let single = Graph::from_edges(1, []).unwrap();
        let m1 = build_additive(&[1.0], &[1.0]).unwrap();
        let alloc = Allocation::from_seed_sets(vec![1], &[vec![NodeId(0)]]).unwrap();
        let out = diffuse(
            &single,
            &mut EdgeWorld::all_live(&single),
            &m1,
            &NoiseWorld::zero(1),
            &alloc,
        )
        .unwrap();
        assert_eq!(out.adoption, vec![set(&[1])]);
        assert_eq!(out.steps, 1);

        let one = Graph::from_edges(1, []).unwrap();
        let ex = example_block_model();
        let alloc = Allocation::from_seed_sets(
            vec![1, 1, 1],
            &[vec![NodeId(0)], vec![NodeId(0)], vec![NodeId(0)]],
        )
        .unwrap();
        let w3 = NoiseWorld::zero(3);
        let out = diffuse(&one, &mut EdgeWorld::all_live(&one), &ex, &w3, &alloc).unwrap();
        assert_eq!(welfare_of_outcome(&out, &ex, &w3), 4.0);
    }

    #[test]
    fn rejects_invalid_allocation() {
        let (g, mut ew, m, _) = propagation_figure();
        let bad = Allocation::from_pairs_unchecked(vec![1, 1], [(NodeId(7), 0)]);
        assert!(matches!(
            diffuse(&g, &mut ew, &m, &NoiseWorld::zero(2), &bad),
            Err(DiffusionError::InvalidAllocation(_))
        ));
        let bad_item = Allocation::from_pairs_unchecked(vec![1, 1, 1], [(NodeId(0), 2)]);
        assert!(matches!(
            diffuse(&g, &mut ew, &m, &NoiseWorld::zero(2), &bad_item),
            Err(DiffusionError::InvalidAllocation(_))
        ));
    }

    #[test]
    fn allocation_budget_checks() {
        let mut a = Allocation::new(vec![1, 2]);
        assert!(a.insert(NodeId(0), 0).unwrap());
        assert!(!a.insert(NodeId(0), 0).unwrap());
        assert_eq!(
            a.insert(NodeId(1), 0),
            Err(AllocationError::OverBudget { item: 0, budget: 1 })
        );
        assert!(matches!(
            a.insert(NodeId(1), 5),
            Err(AllocationError::ItemOutOfRange { .. })
        ));
        a.insert(NodeId(0), 1).unwrap();
        a.insert(NodeId(3), 1).unwrap();
        assert_eq!(
            a.seed_items(),
            vec![(NodeId(0), set(&[1, 2])), (NodeId(3), set(&[2]))]
        );
        assert_eq!(a.seeds_of(1), vec![NodeId(0), NodeId(3)]);
    }

    #[test]
    fn estimators_on_deterministic_instances() {
        let chain = Graph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let m = build_additive(&[1.0], &[1.0]).unwrap();
        let alloc = Allocation::from_seed_sets(vec![1], &[vec![NodeId(0)]]).unwrap();
        let est = estimate_welfare(&chain, &m, &alloc, 50, 1, None).unwrap();
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.runs, 50);
        assert!(matches!(
            estimate_welfare(&chain, &m, &alloc, 0, 1, None),
            Err(DiffusionError::NoRuns)
        ));

        let sp = estimate_spread(&chain, &[NodeId(0)], 20, 9).unwrap();
        assert_eq!(sp.mean, 3.0);
        assert_eq!(estimate_spread(&chain, &[], 20, 9).unwrap().mean, 0.0);
        let mut ew = EdgeWorld::all_live(&chain);
        assert_eq!(reachable_set(&chain, &mut ew, &[NodeId(0)]).len(), 3);
        assert!(reachable_set(&chain, &mut ew, &[]).is_empty());
        let mut blocked = EdgeWorld::from_live(vec![false, false]);
        assert_eq!(
            reachable_set(&chain, &mut blocked, &[NodeId(1)]),
            vec![NodeId(1)]
        );
    }

    #[test]
    fn star_spread_matches_closed_form() {
        let g = Graph::from_edges(11, (1..=10).map(|l| (0, l, 0.5))).unwrap();
        let est = estimate_spread(&g, &[NodeId(0)], 20_000, 5).unwrap();
        assert!((est.mean - 6.0).abs() < 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn estimates_are_reproducible() {
        let g = Graph::from_edges(11, (1..=10).map(|l| (0, l, 0.5))).unwrap();
        let m = build_additive(&[1.0, 0.5], &[1.0, 1.0])
            .unwrap()
            .with_noise(vec![NoiseSpec::Gaussian { variance: 1.0 }; 2])
            .unwrap();
        let alloc =
            Allocation::from_seed_sets(vec![1, 1], &[vec![NodeId(0)], vec![NodeId(0)]]).unwrap();
        let a = estimate_welfare(&g, &m, &alloc, 500, 17, None).unwrap();
        let b = estimate_welfare(&g, &m, &alloc, 500, 17, None).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| estimate_welfare(&g, &m, &alloc, 500, 17, None).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn trace_is_progressive() {
        let (g, mut ew, m, alloc) = propagation_figure();
        let (out, trace) = diffuse_traced(&g, &mut ew, &m, &NoiseWorld::zero(2), &alloc).unwrap();
        assert_eq!(trace.last().unwrap().adoption, out.adoption);
        for pair in trace.windows(2) {
            for v in 0..3 {
                assert!(pair[0].adoption[v].is_subset(pair[1].adoption[v]));
                assert!(pair[0].desire[v].is_subset(pair[1].desire[v]));
            }
        }
    }

    mod props {
        use super::*;
        use crate::graph::random_wc_graph;
        use crate::items::build_levelwise;
        use proptest::prelude::*;
        use rand::Rng;

        struct Instance {
            g: Graph,
            ew: EdgeWorld,
            m: UtilityModel,
            w: NoiseWorld,
            alloc: Allocation,
        }

        fn instance(seed: u64) -> Instance {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..=8);
            let e = rng.random_range(0..=n * (n - 1)).min(3 * n);
            let g = random_wc_graph(n, e, &mut rng);
            let ew = sample_edge_world(&g, &mut rng);
            let s = rng.random_range(1..=3);
            let prices: Vec<f64> = (0..s).map(|_| rng.random_range(1.0..4.0)).collect();
            let m = build_levelwise(&mut rng, s, &prices)
                .unwrap()
                .with_noise(vec![NoiseSpec::Gaussian { variance: 1.0 }; s])
                .unwrap();
            let w = m.sample_noise_world(&mut rng);
            let budgets: Vec<usize> = (0..s).map(|_| rng.random_range(0..=2)).collect();
            let mut alloc = Allocation::new(budgets.clone());
            for (i, &b) in budgets.iter().enumerate() {
                for _ in 0..b {
                    let _ = alloc.insert(NodeId::from(rng.random_range(0..n)), i);
                }
            }
            Instance { g, ew, m, w, alloc }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(300))]

            #[test]
            fn adopters_spread_to_reachable_nodes(seed in any::<u64>()) {
                let mut t = instance(seed);
                let out = diffuse(&t.g, &mut t.ew, &t.m, &t.w, &t.alloc).unwrap();
                for u in t.g.nodes() {
                    let reach = reachable_set(&t.g, &mut t.ew, &[u]);
                    for &v in &reach {
                        prop_assert!(out.adoption[u.index()].is_subset(out.adoption[v.index()]));
                    }
                }
            }

            #[test]
            fn adoption_sets_are_local_maxima(seed in any::<u64>()) {
                let mut t = instance(seed);
                let out = diffuse(&t.g, &mut t.ew, &t.m, &t.w, &t.alloc).unwrap();
                for (a, d) in out.adoption.iter().zip(&out.desire) {
                    prop_assert!(a.is_subset(*d));
                    let u = t.m.utility(&t.w, *a);
                    for sub in a.subsets() {
                        prop_assert!(t.m.utility(&t.w, sub) <= u);
                    }
                }
            }

            #[test]
            fn welfare_monotone_in_allocation(seed in any::<u64>(), v in 0usize..8, i in 0usize..3) {
                let mut t = instance(seed);
                let before = diffuse(&t.g, &mut t.ew, &t.m, &t.w, &t.alloc).unwrap();
                let v = NodeId::from(v % t.g.num_nodes());
                let i = i % t.m.num_items();
                let mut budgets = t.alloc.budgets().to_vec();
                budgets[i] += 1;
                let bigger = Allocation::from_pairs_unchecked(
                    budgets,
                    t.alloc.pairs().chain([(v, i)]),
                );
                let after = diffuse(&t.g, &mut t.ew, &t.m, &t.w, &bigger).unwrap();
                prop_assert!(
                    welfare_of_outcome(&after, &t.m, &t.w)
                        >= welfare_of_outcome(&before, &t.m, &t.w) - 1e-9
                );
            }

            #[test]
            fn processing_order_is_irrelevant(seed in any::<u64>(), shuffle in any::<u64>()) {
                let mut t = instance(seed);
                let base = diffuse(&t.g, &mut t.ew, &t.m, &t.w, &t.alloc).unwrap();
                for order in [
                    ProcessingOrder::Ascending,
                    ProcessingOrder::Descending,
                    ProcessingOrder::Shuffled(shuffle),
                ] {
                    let o = diffuse_ordered(&t.g, &mut t.ew, &t.m, &t.w, &t.alloc, order).unwrap();
                    prop_assert_eq!(&o, &base);
                }
            }

            #[test]
            fn rounds_are_progressive_and_bounded(seed in any::<u64>()) {
                let mut t = instance(seed);
                let (out, trace) = diffuse_traced(&t.g, &mut t.ew, &t.m, &t.w, &t.alloc).unwrap();
                prop_assert!(out.steps <= t.g.num_nodes() * t.m.num_items());
                for pair in trace.windows(2) {
                    for v in 0..t.g.num_nodes() {
                        prop_assert!(pair[0].adoption[v].is_subset(pair[1].adoption[v]));
                        prop_assert!(pair[0].desire[v].is_subset(pair[1].desire[v]));
                    }
                }
            }
        }
    }
}
