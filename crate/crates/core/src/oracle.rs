//! Exact computations on tiny instances by enumerating edge worlds.
//!
//! Edges with probability 0 or 1 are fixed; only the remaining uncertain
//! edges are enumerated, so deterministic subgraphs may be large.

use rayon::prelude::*;
use thiserror::Error;

use crate::allocate::{AllocateError, SeedSelector};
use crate::diffusion::{
    diffuse, reachable_set, run_rng, sample_edge_world, welfare_of_outcome, Allocation,
    DiffusionError, EdgeWorld,
};
use crate::graph::{Graph, NodeId};
use crate::items::{NoiseWorld, UtilityModel};

pub const MAX_UNCERTAIN_EDGES: usize = 22;
pub const DEFAULT_SEARCH_CAP: u64 = 1_000_000;

/// Worlds summed sequentially before the pairwise reduction.
const WORLD_CHUNK: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("{found} uncertain edges exceed the enumeration limit of {MAX_UNCERTAIN_EDGES}")]
    TooManyUncertainEdges { found: usize },
    #[error("search space of {size} allocations exceeds cap {cap}")]
    SearchCap { size: u64, cap: u64 },
    #[error("noise is not discrete; exact welfare needs a fixed or finite noise world")]
    ContinuousNoise,
    #[error("k = {k} exceeds node count {n}")]
    TooManySeeds { k: usize, n: usize },
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// Pairwise (cascade) summation with a fixed split, independent of threads.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n => pairwise_sum(&xs[..n / 2]) + pairwise_sum(&xs[n / 2..]),
    }
}

/// Every edge world of a graph with its probability.
pub struct ExactEvaluator<'a> {
    g: &'a Graph,
    uncertain: Vec<usize>,
    base: Vec<bool>,
}

impl<'a> ExactEvaluator<'a> {
    pub fn new(g: &'a Graph) -> Result<Self, OracleError> {
        let uncertain: Vec<usize> = g
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.prob > 0.0 && e.prob < 1.0)
            .map(|(j, _)| j)
            .collect();
        if uncertain.len() > MAX_UNCERTAIN_EDGES {
            return Err(OracleError::TooManyUncertainEdges {
                found: uncertain.len(),
            });
        }
        let base = g.edges().iter().map(|e| e.prob >= 1.0).collect();
        Ok(ExactEvaluator { g, uncertain, base })
    }

    pub fn graph(&self) -> &Graph {
        self.g
    }

    pub fn num_worlds(&self) -> usize {
        1 << self.uncertain.len()
    }

    /// World `index` (bit `j` decides the `j`-th uncertain edge) and its
    /// probability.
    pub fn world(&self, index: usize) -> (f64, EdgeWorld) {
        let mut live = self.base.clone();
        let mut p = 1.0;
        for (j, &e) in self.uncertain.iter().enumerate() {
            let q = self.g.edges()[e].prob;
            if index >> j & 1 == 1 {
                live[e] = true;
                p *= q;
            } else {
                p *= 1.0 - q;
            }
        }
        (p, EdgeWorld::from_live(live))
    }

    /// `Σ_world Pr[world] · f(world)`, parallel over fixed chunks.
    pub fn expectation<F, E>(&self, f: F) -> Result<f64, E>
    where
        F: Fn(&EdgeWorld) -> Result<f64, E> + Sync,
        E: Send,
    {
        let worlds = self.num_worlds();
        let chunks = worlds.div_ceil(WORLD_CHUNK);
        let sums: Vec<f64> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = 0.0;
                for idx in c * WORLD_CHUNK..((c + 1) * WORLD_CHUNK).min(worlds) {
                    let (p, w) = self.world(idx);
                    if p > 0.0 {
                        acc += p * f(&w)?;
                    }
                }
                Ok(acc)
            })
            .collect::<Result<_, E>>()?;
        Ok(pairwise_sum(&sums))
    }

    /// Expectation evaluated sequentially, for callers already running in
    /// parallel over an outer loop.
    fn expectation_seq<F, E>(&self, f: F) -> Result<f64, E>
    where
        F: Fn(&EdgeWorld) -> Result<f64, E>,
    {
        let worlds = self.num_worlds();
        let mut sums = Vec::with_capacity(worlds.div_ceil(WORLD_CHUNK));
        for c in 0..worlds.div_ceil(WORLD_CHUNK) {
            let mut acc = 0.0;
            for idx in c * WORLD_CHUNK..((c + 1) * WORLD_CHUNK).min(worlds) {
                let (p, w) = self.world(idx);
                if p > 0.0 {
                    acc += p * f(&w)?;
                }
            }
            sums.push(acc);
        }
        Ok(pairwise_sum(&sums))
    }

    pub fn spread(&self, seeds: &[NodeId]) -> f64 {
        self.expectation::<_, ()>(|w| {
            let mut w = w;
            Ok(reachable_set(self.g, &mut w, seeds).len() as f64)
        })
        .unwrap()
    }

    pub fn welfare(
        &self,
        m: &UtilityModel,
        noise: &NoiseWorld,
        alloc: &Allocation,
    ) -> Result<f64, OracleError> {
        self.expectation(|w| welfare_in(self.g, w, m, noise, alloc))
    }

    fn welfare_seq(
        &self,
        m: &UtilityModel,
        noise: &NoiseWorld,
        alloc: &Allocation,
    ) -> Result<f64, OracleError> {
        self.expectation_seq(|w| welfare_in(self.g, w, m, noise, alloc))
    }
}

fn welfare_in(
    g: &Graph,
    ew: &EdgeWorld,
    m: &UtilityModel,
    noise: &NoiseWorld,
    alloc: &Allocation,
) -> Result<f64, OracleError> {
    let mut ew = ew;
    let out = diffuse(g, &mut ew, m, noise, alloc)?;
    Ok(welfare_of_outcome(&out, m, noise))
}

/// Expected number of nodes reached from `seeds`.
pub fn exact_spread(g: &Graph, seeds: &[NodeId]) -> Result<f64, OracleError> {
    Ok(ExactEvaluator::new(g)?.spread(seeds))
}

/// Expected welfare of `alloc` with the noise world held fixed.
pub fn exact_welfare(
    g: &Graph,
    m: &UtilityModel,
    noise: &NoiseWorld,
    alloc: &Allocation,
) -> Result<f64, OracleError> {
    ExactEvaluator::new(g)?.welfare(m, noise, alloc)
}

/// Expected welfare over both edge worlds and the model's discrete noise.
pub fn exact_expected_welfare(
    g: &Graph,
    m: &UtilityModel,
    alloc: &Allocation,
) -> Result<f64, OracleError> {
    let worlds = m
        .enumerate_noise_worlds()
        .ok_or(OracleError::ContinuousNoise)?;
    let ev = ExactEvaluator::new(g)?;
    let parts = worlds
        .iter()
        .map(|(p, w)| Ok(p * ev.welfare(m, w, alloc)?))
        .collect::<Result<Vec<f64>, OracleError>>()?;
    Ok(pairwise_sum(&parts))
}

/// Greedy seeds by exact marginal spread, lowest id on ties. Returns the
/// order and the exact spread of every prefix.
pub fn exact_greedy_seeds(g: &Graph, k: usize) -> Result<(Vec<NodeId>, Vec<f64>), OracleError> {
    let n = g.num_nodes();
    if k > n {
        return Err(OracleError::TooManySeeds { k, n });
    }
    let ev = ExactEvaluator::new(g)?;
    let mut seeds: Vec<NodeId> = Vec::with_capacity(k);
    let mut spreads = Vec::with_capacity(k);
    let mut chosen = vec![false; n];
    for _ in 0..k {
        let candidates: Vec<(NodeId, f64)> = g
            .nodes()
            .filter(|v| !chosen[v.index()])
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|v| {
                let mut trial = seeds.clone();
                trial.push(v);
                (v, ev.spread(&trial))
            })
            .collect();
        let (best, value) = candidates
            .into_iter()
            .fold(None, |acc: Option<(NodeId, f64)>, (v, x)| match acc {
                Some((_, y)) if y >= x => acc,
                _ => Some((v, x)),
            })
            .unwrap();
        chosen[best.index()] = true;
        seeds.push(best);
        spreads.push(value);
    }
    Ok((seeds, spreads))
}

/// Seed selection by exact greedy; its orders are prefix-consistent by
/// construction.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExactGreedySelector;

impl SeedSelector for ExactGreedySelector {
    fn select(&self, g: &Graph, budgets: &[usize]) -> Result<Vec<NodeId>, AllocateError> {
        let k = budgets.iter().copied().max().unwrap_or(0);
        exact_greedy_seeds(g, k)
            .map(|(s, _)| s)
            .map_err(|e| AllocateError::Selector(e.to_string()))
    }
}

/// Lazy-greedy (CELF) seed selection with Monte-Carlo spread estimates.
/// All evaluations share one sample of `mc_runs` edge worlds drawn from
/// `seed`; a marginal gain only explores nodes not yet covered by the chosen
/// seeds in each world. Returned spreads are cumulative sample means.
pub fn celf_seeds(
    g: &Graph,
    k: usize,
    mc_runs: usize,
    seed: u64,
) -> Result<(Vec<NodeId>, Vec<f64>), OracleError> {
    let n = g.num_nodes();
    if k > n {
        return Err(OracleError::TooManySeeds { k, n });
    }
    if mc_runs == 0 {
        return Err(DiffusionError::NoRuns.into());
    }
    let worlds: Vec<EdgeWorld> = (0..mc_runs as u64)
        .into_par_iter()
        .map(|r| sample_edge_world(g, &mut run_rng(seed, r)))
        .collect();
    let mut covered = vec![vec![false; n]; mc_runs];
    let gain = |v: NodeId, covered: &[Vec<bool>]| -> f64 {
        let total: usize = worlds
            .par_iter()
            .zip(covered)
            .map_init(
                || (vec![false; n], Vec::new(), Vec::new()),
                |(seen, stack, visited), (ew, cov)| {
                    fresh_reach(g, ew, cov, v, seen, stack, visited);
                    visited.len()
                },
            )
            .sum();
        total as f64 / mc_runs as f64
    };
    // (gain, node, round the gain was computed in)
    let mut heap: Vec<(f64, NodeId, usize)> =
        g.nodes().map(|v| (gain(v, &covered), v, 0)).collect();
    let mut seeds = Vec::with_capacity(k);
    let mut spreads = Vec::with_capacity(k);
    let mut current = 0.0;
    let better =
        |a: &(f64, NodeId, usize), b: &(f64, NodeId, usize)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    while seeds.len() < k {
        let top = (0..heap.len())
            .reduce(|a, b| if better(&heap[b], &heap[a]) { b } else { a })
            .unwrap();
        if heap[top].2 == seeds.len() {
            let (g_v, v, _) = heap.swap_remove(top);
            seeds.push(v);
            current += g_v;
            spreads.push(current);
            worlds.par_iter().zip(&mut covered).for_each_init(
                || (vec![false; n], Vec::new(), Vec::new()),
                |(seen, stack, visited), (ew, cov)| {
                    fresh_reach(g, ew, cov, v, seen, stack, visited);
                    for u in visited.iter() {
                        cov[u.index()] = true;
                    }
                },
            );
        } else {
            let v = heap[top].1;
            heap[top] = (gain(v, &covered), v, seeds.len());
        }
    }
    Ok((seeds, spreads))
}

/// Collects into `visited` the nodes reachable from `v` through live edges
/// without entering `covered`. Covered sets are closed under reachability,
/// so this is exactly the marginal coverage of `v`.
fn fresh_reach(
    g: &Graph,
    ew: &EdgeWorld,
    covered: &[bool],
    v: NodeId,
    seen: &mut [bool],
    stack: &mut Vec<NodeId>,
    visited: &mut Vec<NodeId>,
) {
    visited.clear();
    if covered[v.index()] {
        return;
    }
    seen[v.index()] = true;
    stack.push(v);
    while let Some(u) = stack.pop() {
        visited.push(u);
        for adj in g.out_neighbors(u) {
            let w = adj.node.index();
            if !seen[w] && !covered[w] && ew.get(adj.edge) {
                seen[w] = true;
                stack.push(adj.node);
            }
        }
    }
    for u in visited.iter() {
        seen[u.index()] = false;
    }
}

fn binom(n: u64, k: u64) -> u64 {
    (0..k).fold(1u64, |acc, j| acc.saturating_mul(n - j) / (j + 1))
}

/// Subsets of `0..n` with at most `b` elements, smallest first, each in
/// ascending lexicographic order within its size.
fn small_subsets(n: usize, b: usize) -> Vec<Vec<NodeId>> {
    let mut out = vec![Vec::new()];
    for size in 1..=b.min(n) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| NodeId::from(i)).collect());
            let mut j = size;
            while j > 0 && idx[j - 1] == n - size + j - 1 {
                j -= 1;
            }
            if j == 0 {
                break;
            }
            idx[j - 1] += 1;
            for t in j..size {
                idx[t] = idx[t - 1] + 1;
            }
        }
    }
    out
}

/// Number of allocations giving each item a seed set of size at most `b_i`.
pub fn allocation_count(n: usize, budgets: &[usize]) -> u64 {
    budgets.iter().fold(1u64, |acc, &b| {
        let per: u64 = (0..=b.min(n) as u64).map(|j| binom(n as u64, j)).sum();
        acc.saturating_mul(per)
    })
}

/// Every allocation within `budgets`, in mixed-radix order with item 0 as
/// the fastest digit.
pub fn enumerate_allocations(
    n: usize,
    budgets: &[usize],
    search_cap: u64,
) -> Result<Vec<Allocation>, OracleError> {
    let size = allocation_count(n, budgets);
    if size > search_cap {
        return Err(OracleError::SearchCap {
            size,
            cap: search_cap,
        });
    }
    let choices: Vec<Vec<Vec<NodeId>>> = budgets.iter().map(|&b| small_subsets(n, b)).collect();
    Ok((0..size as usize)
        .map(|mut idx| {
            let mut pairs = Vec::new();
            for (i, c) in choices.iter().enumerate() {
                let pick = &c[idx % c.len()];
                idx /= c.len();
                pairs.extend(pick.iter().map(|&v| (v, i)));
            }
            Allocation::from_pairs_unchecked(budgets.to_vec(), pairs)
        })
        .collect())
}

/// Best allocation for a fixed noise world by exhaustive search. The first
/// allocation in enumeration order wins ties.
pub fn brute_force_opt_welfare(
    g: &Graph,
    m: &UtilityModel,
    noise: &NoiseWorld,
    budgets: &[usize],
    search_cap: u64,
) -> Result<(Allocation, f64), OracleError> {
    let allocs = enumerate_allocations(g.num_nodes(), budgets, search_cap)?;
    let ev = ExactEvaluator::new(g)?;
    let values: Vec<f64> = allocs
        .par_iter()
        .map(|a| ev.welfare_seq(m, noise, a))
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (j, &x) in values.iter().enumerate() {
        if x > values[best] {
            best = j;
        }
    }
    Ok((allocs[best].clone(), values[best]))
}
