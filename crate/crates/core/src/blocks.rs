//! Block decomposition of the maximal-utility itemset.
//!
//! Items are ranked by non-increasing budget, ties by ascending id. In rank
//! space the precedence order over nonempty itemsets compares members from
//! the highest rank downward; a set whose members run out first precedes,
//! and at the first mismatch the lower rank precedes. Read as bitmasks over
//! ranks this is exactly numeric order, so the sequence is produced by
//! counting.

use thiserror::Error;

use crate::diffusion::Allocation;
use crate::graph::NodeId;
use crate::items::{ItemSet, ModelError, NoiseWorld, UtilityModel};

#[derive(Debug, Error, PartialEq)]
pub enum BlockError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("expected {expected} budgets, found {found}")]
    BudgetLength { expected: usize, found: usize },
    #[error("set {0} is not contained in the maximal itemset {1}")]
    NotInMaximal(ItemSet, ItemSet),
    #[error("{needed} ordered seeds required, {found} given")]
    TooFewSeeds { needed: usize, found: usize },
}

/// Ranking of items by non-increasing budget, ties by ascending id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ItemOrder {
    rank_to_item: Vec<usize>,
    item_to_rank: Vec<usize>,
}

impl ItemOrder {
    pub fn by_budget(budgets: &[usize]) -> Self {
        let mut rank_to_item: Vec<usize> = (0..budgets.len()).collect();
        rank_to_item.sort_by(|&a, &b| budgets[b].cmp(&budgets[a]).then(a.cmp(&b)));
        let mut item_to_rank = vec![0; budgets.len()];
        for (r, &i) in rank_to_item.iter().enumerate() {
            item_to_rank[i] = r;
        }
        ItemOrder {
            rank_to_item,
            item_to_rank,
        }
    }

    pub fn item(&self, rank: usize) -> usize {
        self.rank_to_item[rank]
    }

    pub fn rank(&self, item: usize) -> usize {
        self.item_to_rank[item]
    }

    pub fn to_ranks(&self, set: ItemSet) -> ItemSet {
        set.iter()
            .fold(ItemSet::EMPTY, |r, i| r.with(self.item_to_rank[i]))
    }

    pub fn to_items(&self, ranks: ItemSet) -> ItemSet {
        ranks
            .iter()
            .fold(ItemSet::EMPTY, |r, k| r.with(self.rank_to_item[k]))
    }
}

/// Precedence between two distinct nonempty rank-space sets.
pub fn prec_less(s: ItemSet, t: ItemSet) -> bool {
    debug_assert!(s != t && !s.is_empty() && !t.is_empty());
    let mut a = s.0;
    let mut b = t.0;
    loop {
        match (a, b) {
            (0, 0) => return false,
            (0, _) => return true,
            (_, 0) => return false,
            _ => {}
        }
        let ha = 31 - a.leading_zeros();
        let hb = 31 - b.leading_zeros();
        if ha != hb {
            return ha < hb;
        }
        a &= !(1 << ha);
        b &= !(1 << hb);
    }
}

/// All nonempty rank-space subsets of `s` ranks in precedence order.
pub fn subset_sequence(s: usize) -> impl Iterator<Item = ItemSet> {
    (1..(1u32 << s)).map(ItemSet)
}

/// Result of block generation. Every set is expressed in original item ids;
/// per-block vectors are indexed by block position.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSequence {
    pub istar: ItemSet,
    pub blocks: Vec<ItemSet>,
    pub deltas: Vec<f64>,
    /// Minimum item budget inside each block.
    pub block_budgets: Vec<usize>,
    /// Minimum item budget over the first `i+1` blocks.
    pub effective_budgets: Vec<usize>,
    pub anchor_blocks: Vec<usize>,
    pub anchor_items: Vec<usize>,
    pub order: ItemOrder,
}

impl BlockSequence {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Partitions the maximal itemset of world `w` into blocks.
pub fn generate_blocks(
    m: &UtilityModel,
    w: &NoiseWorld,
    budgets: &[usize],
) -> Result<BlockSequence, BlockError> {
    let s = m.num_items();
    if budgets.len() != s {
        return Err(BlockError::BudgetLength {
            expected: s,
            found: budgets.len(),
        });
    }
    let istar = m.maximal_itemset(w)?;
    let order = ItemOrder::by_budget(budgets);
    let istar_r = order.to_ranks(istar);

    let mut blocks = Vec::new();
    let mut deltas = Vec::new();
    let mut chosen = ItemSet::EMPTY;
    let mut u_chosen = 0.0;
    while chosen != istar {
        let rest_r = istar_r.difference(order.to_ranks(chosen));
        // Subsets of a mask come out in ascending numeric order.
        let pick = rest_r
            .subsets()
            .skip(1)
            .map(|c| order.to_items(c))
            .find(|&c| m.utility(w, chosen.union(c)) >= u_chosen)
            .expect("the remainder of the maximal itemset has non-negative marginal");
        let u_next = m.utility(w, chosen.union(pick));
        blocks.push(pick);
        deltas.push(u_next - u_chosen);
        chosen = chosen.union(pick);
        u_chosen = u_next;
    }

    let block_budgets: Vec<usize> = blocks
        .iter()
        .map(|b| b.iter().map(|i| budgets[i]).min().unwrap())
        .collect();
    let mut effective_budgets = Vec::with_capacity(blocks.len());
    let mut anchor_blocks = Vec::with_capacity(blocks.len());
    let mut anchor_items = Vec::with_capacity(blocks.len());
    let mut anchor = 0;
    for (i, &bb) in block_budgets.iter().enumerate() {
        if bb <= block_budgets[anchor] {
            anchor = i;
        }
        effective_budgets.push(block_budgets[anchor]);
        anchor_blocks.push(anchor);
        let top_rank = order.to_ranks(blocks[anchor]).iter().last().unwrap();
        anchor_items.push(order.item(top_rank));
    }

    Ok(BlockSequence {
        istar,
        blocks,
        deltas,
        block_budgets,
        effective_budgets,
        anchor_blocks,
        anchor_items,
        order,
    })
}

/// Marginals of `a ∩ B_i` with respect to the earlier parts of `a`.
pub fn partition_deltas(
    m: &UtilityModel,
    w: &NoiseWorld,
    bs: &BlockSequence,
    a: ItemSet,
) -> Result<Vec<f64>, BlockError> {
    if !a.is_subset(bs.istar) {
        return Err(BlockError::NotInMaximal(a, bs.istar));
    }
    let mut prefix = ItemSet::EMPTY;
    let mut u_prefix = 0.0;
    Ok(bs
        .blocks
        .iter()
        .map(|&b| {
            let next = prefix.union(a.intersection(b));
            let u_next = m.utility(w, next);
            let d = u_next - u_prefix;
            prefix = next;
            u_prefix = u_next;
            d
        })
        .collect())
}

/// Top-`e_i` prefix of the greedy seed order for every block.
pub fn greedy_effective_seeds(
    bs: &BlockSequence,
    ordered: &[NodeId],
) -> Result<Vec<Vec<NodeId>>, BlockError> {
    let needed = bs.effective_budgets.iter().copied().max().unwrap_or(0);
    if ordered.len() < needed {
        return Err(BlockError::TooFewSeeds {
            needed,
            found: ordered.len(),
        });
    }
    Ok(bs
        .effective_budgets
        .iter()
        .map(|&e| ordered[..e].to_vec())
        .collect())
}

/// Welfare of the greedy bundle allocation computed from block marginals.
pub fn analytic_greedy_welfare(
    bs: &BlockSequence,
    ordered: &[NodeId],
    mut spread: impl FnMut(&[NodeId]) -> f64,
) -> Result<f64, BlockError> {
    let eff = greedy_effective_seeds(bs, ordered)?;
    Ok(eff
        .iter()
        .zip(&bs.deltas)
        .map(|(seeds, d)| spread(seeds) * d)
        .sum())
}

/// Upper bound on the welfare of any allocation: each block contributes its
/// marginal times the spread of its anchor item's seeds.
pub fn anchor_upper_bound(
    bs: &BlockSequence,
    alloc: &Allocation,
    mut spread: impl FnMut(&[NodeId]) -> f64,
) -> f64 {
    bs.anchor_items
        .iter()
        .zip(&bs.deltas)
        .map(|(&a, d)| spread(&alloc.seeds_of(a)) * d)
        .sum()
}
