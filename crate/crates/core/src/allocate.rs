//! Seed allocation strategies.
//!
//! `bundle_grd` gives every item the top-`b_i` prefix of one ordered seed
//! list. `item_disj` and `bundle_disj` are the disjoint baselines. Seed
//! lists come from a [`SeedSelector`], so exact selectors can stand in for
//! the sampling-based one.

use std::fmt;

use thiserror::Error;

use crate::blocks::ItemOrder;
use crate::diffusion::{Allocation, AllocationError};
use crate::graph::{Graph, NodeId};
use crate::items::{ItemSet, UtilityModel};
use crate::prima::{prima, PrimaError, PrimaParams};

#[derive(Debug, Error, PartialEq)]
pub enum AllocateError {
    #[error(transparent)]
    Prima(#[from] PrimaError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error("{needed} distinct seed nodes required but the graph has {n}")]
    NotEnoughNodes { needed: usize, n: usize },
    #[error("model has {model} items but {budgets} budgets were given")]
    ItemMismatch { model: usize, budgets: usize },
    #[error("seed selector failed: {0}")]
    Selector(String),
}

/// Produces an ordered seed list whose prefixes serve every positive budget
/// in `budgets`. The list has length `max(budgets)`.
pub trait SeedSelector {
    fn select(&self, g: &Graph, budgets: &[usize]) -> Result<Vec<NodeId>, AllocateError>;
}

/// Seed selection by the prefix-preserving RR-set algorithm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrimaSelector {
    pub params: PrimaParams,
    pub seed: u64,
}

impl SeedSelector for PrimaSelector {
    fn select(&self, g: &Graph, budgets: &[usize]) -> Result<Vec<NodeId>, AllocateError> {
        let positive: Vec<usize> = budgets.iter().copied().filter(|&b| b > 0).collect();
        if positive.is_empty() {
            return Ok(Vec::new());
        }
        Ok(prima(g, &positive, &self.params, self.seed)?.order.nodes)
    }
}

/// Every item on the top-`b_i` prefix of one ordered seed list.
pub fn bundle_grd(
    g: &Graph,
    budgets: &[usize],
    selector: &dyn SeedSelector,
) -> Result<Allocation, AllocateError> {
    let b_max = budgets.iter().copied().max().unwrap_or(0);
    if b_max > g.num_nodes() {
        return Err(AllocateError::NotEnoughNodes {
            needed: b_max,
            n: g.num_nodes(),
        });
    }
    let order = selector.select(g, budgets)?;
    let mut alloc = Allocation::new(budgets.to_vec());
    for (i, &b) in budgets.iter().enumerate() {
        for &v in &order[..b] {
            alloc.insert(v, i)?;
        }
    }
    Ok(alloc)
}

/// One item per seed node: items in non-increasing budget order take
/// consecutive runs of a single ordered list of `Σ b_i` nodes.
pub fn item_disj(
    g: &Graph,
    budgets: &[usize],
    selector: &dyn SeedSelector,
) -> Result<Allocation, AllocateError> {
    let total: usize = budgets.iter().sum();
    if total > g.num_nodes() {
        return Err(AllocateError::NotEnoughNodes {
            needed: total,
            n: g.num_nodes(),
        });
    }
    let list = selector.select(g, &[total])?;
    let order = ItemOrder::by_budget(budgets);
    let mut alloc = Allocation::new(budgets.to_vec());
    let mut next = 0;
    for r in 0..budgets.len() {
        let i = order.item(r);
        for &v in &list[next..next + budgets[i]] {
            alloc.insert(v, i)?;
        }
        next += budgets[i];
    }
    Ok(alloc)
}

/// Hands out nodes never used by an earlier bundle or item.
struct FreshSeeds<'a> {
    g: &'a Graph,
    selector: &'a dyn SeedSelector,
    used: Vec<bool>,
    count: usize,
}

impl FreshSeeds<'_> {
    /// The first `k` unused nodes of a list of `count + k` selected nodes.
    fn take(&mut self, k: usize) -> Result<Vec<NodeId>, AllocateError> {
        if k == 0 {
            return Ok(Vec::new());
        }
        let needed = self.count + k;
        if needed > self.g.num_nodes() {
            return Err(AllocateError::NotEnoughNodes {
                needed,
                n: self.g.num_nodes(),
            });
        }
        let list = self.selector.select(self.g, &[needed])?;
        let fresh: Vec<NodeId> = list
            .into_iter()
            .filter(|v| !self.used[v.index()])
            .take(k)
            .collect();
        if fresh.len() < k {
            return Err(AllocateError::Selector(format!(
                "selector returned fewer than {k} unused nodes"
            )));
        }
        for v in &fresh {
            self.used[v.index()] = true;
        }
        self.count += k;
        Ok(fresh)
    }
}

/// Bundles of complementary items on disjoint seed sets.
///
/// Repeatedly picks the smallest set of still-budgeted items with
/// non-negative deterministic utility (earliest in precedence order among
/// equal sizes) and gives it `min b_i` fresh seeds. Items left with budget
/// then ride on the seeds of earlier bundles that lack them, in bundle
/// order, and whatever remains goes to fresh seeds.
pub fn bundle_disj(
    g: &Graph,
    m: &UtilityModel,
    budgets: &[usize],
    selector: &dyn SeedSelector,
) -> Result<Allocation, AllocateError> {
    let s = m.num_items();
    if budgets.len() != s {
        return Err(AllocateError::ItemMismatch {
            model: s,
            budgets: budgets.len(),
        });
    }
    let order = ItemOrder::by_budget(budgets);
    let mut left = budgets.to_vec();
    let mut fresh = FreshSeeds {
        g,
        selector,
        used: vec![false; g.num_nodes()],
        count: 0,
    };
    let mut alloc = Allocation::new(budgets.to_vec());
    let mut bundles: Vec<(ItemSet, Vec<NodeId>)> = Vec::new();

    loop {
        let active = (0..s)
            .filter(|&i| left[i] > 0)
            .fold(ItemSet::EMPTY, |a, i| a.with(i));
        let active_r = order.to_ranks(active);
        let mut best: Option<ItemSet> = None;
        // Subsets of a mask come out in ascending precedence order.
        for c in active_r.subsets().skip(1) {
            if best.is_some_and(|b| order.to_ranks(b).len() <= c.len()) {
                continue;
            }
            let items = order.to_items(c);
            if m.deterministic_utility(items) >= 0.0 {
                best = Some(items);
            }
        }
        let Some(bundle) = best else { break };
        let b = bundle.iter().map(|i| left[i]).min().unwrap();
        let seeds = fresh.take(b)?;
        for i in bundle.iter() {
            for &v in &seeds {
                alloc.insert(v, i)?;
            }
            left[i] -= b;
        }
        bundles.push((bundle, seeds));
    }

    if bundles.is_empty() {
        return Ok(alloc);
    }
    for r in 0..s {
        let i = order.item(r);
        for (bundle, seeds) in &bundles {
            if left[i] == 0 {
                break;
            }
            if bundle.contains(i) {
                continue;
            }
            let k = left[i].min(seeds.len());
            for &v in &seeds[..k] {
                alloc.insert(v, i)?;
            }
            left[i] -= k;
        }
        if left[i] > 0 {
            for v in fresh.take(left[i])? {
                alloc.insert(v, i)?;
            }
            left[i] = 0;
        }
    }
    Ok(alloc)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AllocationViolation {
    OverBudget {
        item: usize,
        seeds: usize,
        budget: usize,
    },
    NodeOutOfRange {
        node: NodeId,
        n: usize,
    },
    ItemOutOfRange {
        item: usize,
        s: usize,
    },
}

impl fmt::Display for AllocationViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocationViolation::OverBudget {
                item,
                seeds,
                budget,
            } => {
                write!(f, "item {item} has {seeds} seeds but budget {budget}")
            }
            AllocationViolation::NodeOutOfRange { node, n } => {
                write!(f, "node {node} outside graph of {n} nodes")
            }
            AllocationViolation::ItemOutOfRange { item, s } => {
                write!(f, "item {item} outside universe of {s} items")
            }
        }
    }
}

/// Every way `alloc` breaks the budgets or the node range. Pairs are a set,
/// so duplicates cannot occur.
pub fn validate_allocation(
    alloc: &Allocation,
    budgets: &[usize],
    n: usize,
) -> Vec<AllocationViolation> {
    let mut out = Vec::new();
    let mut counts = vec![0usize; budgets.len()];
    for (v, i) in alloc.pairs() {
        if v.index() >= n {
            out.push(AllocationViolation::NodeOutOfRange { node: v, n });
        }
        match counts.get_mut(i) {
            Some(c) => *c += 1,
            None => out.push(AllocationViolation::ItemOutOfRange {
                item: i,
                s: budgets.len(),
            }),
        }
    }
    for (item, (&seeds, &budget)) in counts.iter().zip(budgets).enumerate() {
        if seeds > budget {
            out.push(AllocationViolation::OverBudget {
                item,
                seeds,
                budget,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::items::NoiseSpec;
    use crate::items::UtilityModel;

    /// Returns `0..k_max` in a fixed shuffled order.
    struct FixedList(Vec<u32>);

    impl SeedSelector for FixedList {
        fn select(&self, _g: &Graph, budgets: &[usize]) -> Result<Vec<NodeId>, AllocateError> {
            let k = budgets.iter().copied().max().unwrap_or(0);
            Ok(self.0[..k].iter().map(|&v| NodeId(v)).collect())
        }
    }

    fn empty_graph(n: usize) -> Graph {
        Graph::from_edges(n, []).unwrap()
    }

    fn ids(v: &[u32]) -> Vec<NodeId> {
        v.iter().map(|&x| NodeId(x)).collect()
    }

    #[test]
    fn bundle_grd_prefixes() {
        let g = empty_graph(5);
        let sel = FixedList(vec![3, 1, 4, 0, 2]);
        let a = bundle_grd(&g, &[2, 2], &sel).unwrap();
        assert_eq!(a.seeds_of(0), a.seeds_of(1));
        let a = bundle_grd(&g, &[2, 1], &sel).unwrap();
        assert_eq!(a.seeds_of(0), ids(&[1, 3]));
        assert_eq!(a.seeds_of(1), ids(&[3]));

        let one = empty_graph(1);
        let p = PrimaSelector {
            params: PrimaParams::default(),
            seed: 0,
        };
        let a = bundle_grd(&one, &[1, 1, 1], &p).unwrap();
        assert_eq!(a.seed_items(), vec![(NodeId(0), ItemSet::full(3))]);
        assert!(bundle_grd(&one, &[2], &p).is_err());
        assert!(bundle_grd(&one, &[0, 0], &p).unwrap().is_empty());
    }

    #[test]
    fn item_disj_assignment() {
        let g = empty_graph(3);
        let sel = FixedList(vec![0, 1, 2]);
        let a = item_disj(&g, &[2, 1], &sel).unwrap();
        assert_eq!(a.seeds_of(0), ids(&[0, 1]));
        assert_eq!(a.seeds_of(1), ids(&[2]));
        // Larger budget goes first even when listed second.
        let a = item_disj(&g, &[1, 2], &sel).unwrap();
        assert_eq!(a.seeds_of(1), ids(&[0, 1]));
        assert_eq!(a.seeds_of(0), ids(&[2]));
        let two = empty_graph(2);
        let a = item_disj(&two, &[1, 1], &sel).unwrap();
        assert_ne!(a.seeds_of(0), a.seeds_of(1));
        assert!(matches!(
            item_disj(&two, &[2, 1], &sel),
            Err(AllocateError::NotEnoughNodes { needed: 3, n: 2 })
        ));
    }

    fn model(values: &[f64], prices: &[f64]) -> UtilityModel {
        let s = prices.len();
        let names = (1..=s).map(|i| format!("i{i}")).collect();
        UtilityModel::new(
            names,
            values.to_vec(),
            prices.to_vec(),
            vec![NoiseSpec::Zero; s],
            true,
        )
        .unwrap()
    }

    #[test]
    fn bundle_disj_positive_items_match_item_disj() {
        let g = empty_graph(6);
        let sel = FixedList(vec![5, 2, 0, 4, 1, 3]);
        // Additive, every item individually positive.
        let m = model(&[0.0, 2.0, 3.0, 5.0], &[1.0, 1.0]);
        let a = bundle_disj(&g, &m, &[1, 3], &sel).unwrap();
        let b = item_disj(&g, &[1, 3], &sel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bundle_disj_single_bundle() {
        let g = empty_graph(6);
        let sel = FixedList(vec![5, 2, 0, 4, 1, 3]);
        // U(i1) = U(i2) = -0.5, U({i1,i2}) = 1.
        let m = model(&[0.0, 0.5, 0.5, 3.0], &[1.0, 1.0]);
        let a = bundle_disj(&g, &m, &[3, 2], &sel).unwrap();
        // Two fresh seeds for the bundle; i1's leftover unit finds no bundle
        // without i1 and goes to a fresh seed.
        assert_eq!(a.seeds_of(1), ids(&[2, 5]));
        assert_eq!(a.seeds_of(0), ids(&[0, 2, 5]));
        let grd = bundle_grd(&g, &[2, 2], &sel).unwrap();
        let disj = bundle_disj(&g, &m, &[2, 2], &sel).unwrap();
        assert_eq!(grd, disj);
    }

    #[test]
    fn bundle_disj_negative_item_only_piggybacks() {
        let g = empty_graph(8);
        let sel = FixedList(vec![7, 6, 5, 4, 3, 2, 1, 0]);
        // i1, i2 positive alone; i3 negative alone but complementary.
        let prices = [1.0, 1.0, 1.0];
        let v = |set: u32| -> f64 {
            let mut x = 0.0;
            if set & 1 != 0 {
                x += 2.0;
            }
            if set & 2 != 0 {
                x += 2.0;
            }
            if set & 4 != 0 {
                x += 0.5;
            }
            if set & 5 == 5 {
                x += 1.0;
            }
            if set & 6 == 6 {
                x += 1.0;
            }
            x
        };
        let values: Vec<f64> = (0..8).map(v).collect();
        let m = model(&values, &prices);
        let a = bundle_disj(&g, &m, &[3, 2, 2], &sel).unwrap();
        // Singleton bundles {i1} on {7,6,5}, {i2} on {4,3}; i3 is negative
        // alone and any pair containing it is larger than a singleton.
        assert_eq!(a.seeds_of(0), ids(&[5, 6, 7]));
        assert_eq!(a.seeds_of(1), ids(&[3, 4]));
        // i3 rides on the first two seeds of {i1}'s bundle.
        assert_eq!(a.seeds_of(2), ids(&[6, 7]));
        let a = bundle_disj(&g, &m, &[1, 1, 3], &sel).unwrap();
        // i3 takes {i1}'s seed, then {i2}'s, then one fresh seed.
        assert_eq!(a.seeds_of(2), ids(&[5, 6, 7]));
    }

    #[test]
    fn bundle_disj_without_any_bundle_is_empty() {
        let g = empty_graph(4);
        let sel = FixedList(vec![0, 1, 2, 3]);
        let m = model(&[0.0, 0.5, 0.5, 1.5], &[1.0, 1.0]);
        assert!(bundle_disj(&g, &m, &[1, 1], &sel).unwrap().is_empty());
        assert!(matches!(
            bundle_disj(&g, &m, &[1], &sel),
            Err(AllocateError::ItemMismatch { .. })
        ));
    }

    #[test]
    fn validation() {
        let empty = Allocation::new(vec![1, 1]);
        assert!(validate_allocation(&empty, &[1, 1], 3).is_empty());
        let over = Allocation::from_pairs_unchecked(vec![1], [(NodeId(0), 0), (NodeId(1), 0)]);
        assert_eq!(validate_allocation(&over, &[1], 3).len(), 1);
        let far = Allocation::from_pairs_unchecked(vec![1], [(NodeId(3), 0)]);
        assert_eq!(
            validate_allocation(&far, &[1], 3),
            vec![AllocationViolation::NodeOutOfRange {
                node: NodeId(3),
                n: 3
            }]
        );
    }
}
