//! Items, valuations, prices and noise.
//!
//! The utility of an itemset `I` in a noise world `w` is
//! `V(I) - sum of prices over I + sum of w(i) over I`. Valuations are stored
//! densely, one entry per subset of the (at most 20 item) universe, so every
//! adoption decision can be made by exact enumeration.

use std::fmt;

use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, Normal, Uniform};
use statrs::function::erf::erfc;
use thiserror::Error;

pub const MAX_ITEMS: usize = 20;

/// Subset of the item universe as a bitmask; bit `i` is item `i`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemSet(pub u32);

impl ItemSet {
    pub const EMPTY: ItemSet = ItemSet(0);

    #[inline]
    pub fn singleton(i: usize) -> Self {
        ItemSet(1 << i)
    }

    /// The full universe of `s` items.
    #[inline]
    pub fn full(s: usize) -> Self {
        ItemSet(((1u64 << s) - 1) as u32)
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.0
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    #[inline]
    pub fn with(self, i: usize) -> Self {
        ItemSet(self.0 | 1 << i)
    }

    #[inline]
    pub fn without(self, i: usize) -> Self {
        ItemSet(self.0 & !(1 << i))
    }

    #[inline]
    pub fn union(self, o: ItemSet) -> Self {
        ItemSet(self.0 | o.0)
    }

    #[inline]
    pub fn intersection(self, o: ItemSet) -> Self {
        ItemSet(self.0 & o.0)
    }

    #[inline]
    pub fn difference(self, o: ItemSet) -> Self {
        ItemSet(self.0 & !o.0)
    }

    #[inline]
    pub fn is_subset(self, o: ItemSet) -> bool {
        self.0 & !o.0 == 0
    }

    #[inline]
    pub fn intersects(self, o: ItemSet) -> bool {
        self.0 & o.0 != 0
    }

    /// Item indices in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    /// Every subset of `self`, including the empty set and `self`.
    pub fn subsets(self) -> impl Iterator<Item = ItemSet> {
        let full = self.0;
        let mut sub = 0u32;
        let mut done = false;
        std::iter::from_fn(move || {
            if done {
                return None;
            }
            let cur = sub;
            if sub == full {
                done = true;
            } else {
                sub = (sub.wrapping_sub(full)) & full;
            }
            Some(ItemSet(cur))
        })
    }
}

impl fmt::Display for ItemSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "i{}", i + 1)?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("item count {0} outside 1..={MAX_ITEMS}")]
    ItemCount(usize),
    #[error("expected {expected} {what}, found {found}")]
    Length {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("valuation of the empty set must be 0, found {0}")]
    EmptyValue(f64),
    #[error("price of item {item} must be strictly positive, found {price}")]
    Price { item: usize, price: f64 },
    #[error("noise of item {item}: {reason}")]
    Noise { item: usize, reason: String },
    #[error("valuation is not monotone: {0} violation(s), first {1}")]
    NotMonotone(usize, String),
    #[error("valuation is not supermodular: {0} violation(s), first {1}")]
    NotSupermodular(usize, String),
    #[error("prior {prior} is not a subset of desire {desire}")]
    PriorNotInDesire { prior: ItemSet, desire: ItemSet },
    #[error("two distinct maximum-cardinality utility maximizers {0} and {1}")]
    AmbiguousMaximizer(ItemSet, ItemSet),
    #[error("{0} requires exactly two items")]
    NeedsTwoItems(&'static str),
    #[error("parameter out of domain: {0}")]
    Domain(String),
}

/// Zero-mean additive noise attached to one item.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseSpec {
    Zero,
    Gaussian {
        variance: f64,
    },
    /// Uniform on `[-half_width, +half_width]`.
    Uniform {
        half_width: f64,
    },
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            NoiseSpec::Zero => Ok(()),
            NoiseSpec::Gaussian { variance } => {
                if variance.is_finite() && *variance >= 0.0 {
                    Ok(())
                } else {
                    Err(format!(
                        "gaussian variance {variance} must be finite and >= 0"
                    ))
                }
            }
            NoiseSpec::Uniform { half_width } => {
                if half_width.is_finite() && *half_width >= 0.0 {
                    Ok(())
                } else {
                    Err(format!(
                        "uniform half-width {half_width} must be finite and >= 0"
                    ))
                }
            }
            NoiseSpec::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err("discrete noise needs equally many values and probs".into());
                }
                if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err("discrete probabilities must lie in [0,1]".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(format!("discrete probabilities sum to {total}, not 1"));
                }
                let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
                if mean.abs() > 1e-12 {
                    return Err(format!("discrete noise has mean {mean}, not 0"));
                }
                Ok(())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseSpec::Zero => 0.0,
            NoiseSpec::Gaussian { variance } => {
                if *variance == 0.0 {
                    0.0
                } else {
                    Normal::new(0.0, variance.sqrt())
                        .expect("validated")
                        .sample(rng)
                }
            }
            NoiseSpec::Uniform { half_width } => {
                if *half_width == 0.0 {
                    0.0
                } else {
                    Uniform::new_inclusive(-half_width, *half_width)
                        .expect("validated")
                        .sample(rng)
                }
            }
            NoiseSpec::Discrete { values, probs } => {
                let idx = WeightedIndex::new(probs).expect("validated").sample(rng);
                values[idx]
            }
        }
    }

    /// `Pr[N >= t]` in closed form.
    pub fn survival(&self, t: f64) -> f64 {
        match self {
            NoiseSpec::Zero => indicator(0.0 >= t),
            NoiseSpec::Gaussian { variance } => {
                if *variance == 0.0 {
                    indicator(0.0 >= t)
                } else {
                    0.5 * erfc(t / (2.0 * variance).sqrt())
                }
            }
            NoiseSpec::Uniform { half_width } => {
                let a = *half_width;
                if a == 0.0 {
                    indicator(0.0 >= t)
                } else {
                    ((a - t) / (2.0 * a)).clamp(0.0, 1.0)
                }
            }
            NoiseSpec::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(v, _)| **v >= t)
                .map(|(_, p)| p)
                .sum(),
        }
    }

    /// Finite support with probabilities, when the distribution has one.
    pub fn support(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            NoiseSpec::Zero => Some(vec![(0.0, 1.0)]),
            NoiseSpec::Gaussian { variance } if *variance == 0.0 => Some(vec![(0.0, 1.0)]),
            NoiseSpec::Uniform { half_width } if *half_width == 0.0 => Some(vec![(0.0, 1.0)]),
            NoiseSpec::Discrete { values, probs } => {
                Some(values.iter().copied().zip(probs.iter().copied()).collect())
            }
            _ => None,
        }
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// One realized noise term per item, fixed for the duration of a diffusion.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseWorld(pub Vec<f64>);

impl NoiseWorld {
    pub fn zero(s: usize) -> Self {
        NoiseWorld(vec![0.0; s])
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

/// Adoption probabilities of the two-item GAP model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GapValues {
    pub q_a_none: f64,
    pub q_a_b: f64,
    pub q_b_none: f64,
    pub q_b_a: f64,
}

/// A violated supermodularity inequality:
/// `V(S+x) - V(S) > V(T+x) - V(T)` with `S` a subset of `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupermodularViolation {
    pub s: ItemSet,
    pub t: ItemSet,
    pub x: usize,
}

/// A violated monotonicity inequality: `V(lower) > V(upper)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotoneViolation {
    pub lower: ItemSet,
    pub upper: ItemSet,
}

const CHECK_SLACK: f64 = 1e-9;

/// All pairwise supermodularity violations of a dense set-function table:
/// `f(A+x) - f(A) <= f(A+y+x) - f(A+y)` for every `A` and `x != y` outside `A`.
pub fn supermodularity_violations(table: &[f64], s: usize) -> Vec<SupermodularViolation> {
    let mut out = Vec::new();
    let full = ItemSet::full(s);
    for a in 0..table.len() as u32 {
        let a = ItemSet(a);
        let rest = full.difference(a);
        for x in rest.iter() {
            let gain = table[a.with(x).0 as usize] - table[a.0 as usize];
            for y in rest.without(x).iter() {
                let ay = a.with(y);
                let gain_y = table[ay.with(x).0 as usize] - table[ay.0 as usize];
                if gain > gain_y + CHECK_SLACK * (1.0 + gain.abs()) {
                    out.push(SupermodularViolation { s: a, t: ay, x });
                }
            }
        }
    }
    out
}

/// All monotonicity violations `f(S) > f(S+x)` of a dense table.
pub fn monotonicity_violations(table: &[f64], s: usize) -> Vec<MonotoneViolation> {
    let mut out = Vec::new();
    let full = ItemSet::full(s);
    for a in 0..table.len() as u32 {
        let a = ItemSet(a);
        for x in full.difference(a).iter() {
            let up = a.with(x);
            if table[a.0 as usize]
                > table[up.0 as usize] + CHECK_SLACK * (1.0 + table[a.0 as usize].abs())
            {
                out.push(MonotoneViolation {
                    lower: a,
                    upper: up,
                });
            }
        }
    }
    out
}

/// Item universe with valuation, prices and per-item noise.
#[derive(Clone, Debug)]
pub struct UtilityModel {
    names: Vec<String>,
    valuation: Vec<f64>,
    prices: Vec<f64>,
    noise: Vec<NoiseSpec>,
    /// `V(I) - P(I)` for every subset.
    deterministic: Vec<f64>,
    complementary: bool,
}

impl UtilityModel {
    /// Builds a model. When `complementary` is set the valuation must be
    /// monotone and supermodular; this is checked exhaustively.
    pub fn new(
        names: Vec<String>,
        valuation: Vec<f64>,
        prices: Vec<f64>,
        noise: Vec<NoiseSpec>,
        complementary: bool,
    ) -> Result<Self, ModelError> {
        let s = names.len();
        if s == 0 || s > MAX_ITEMS {
            return Err(ModelError::ItemCount(s));
        }
        let check_len = |what, found| {
            if found != s {
                Err(ModelError::Length {
                    what,
                    expected: s,
                    found,
                })
            } else {
                Ok(())
            }
        };
        check_len("prices", prices.len())?;
        check_len("noise specs", noise.len())?;
        if valuation.len() != 1 << s {
            return Err(ModelError::Length {
                what: "valuation entries",
                expected: 1 << s,
                found: valuation.len(),
            });
        }
        if valuation[0] != 0.0 {
            return Err(ModelError::EmptyValue(valuation[0]));
        }
        for (item, &price) in prices.iter().enumerate() {
            if !(price > 0.0 && price.is_finite()) {
                return Err(ModelError::Price { item, price });
            }
        }
        for (item, spec) in noise.iter().enumerate() {
            spec.validate()
                .map_err(|reason| ModelError::Noise { item, reason })?;
        }
        if let Some(v) = valuation.iter().find(|v| !v.is_finite()) {
            return Err(ModelError::Domain(format!("non-finite valuation {v}")));
        }
        if complementary {
            let mono = monotonicity_violations(&valuation, s);
            if let Some(first) = mono.first() {
                return Err(ModelError::NotMonotone(
                    mono.len(),
                    format!("V{} > V{}", first.lower, first.upper),
                ));
            }
            let sup = supermodularity_violations(&valuation, s);
            if let Some(first) = sup.first() {
                return Err(ModelError::NotSupermodular(
                    sup.len(),
                    format!("S={} T={} x=i{}", first.s, first.t, first.x + 1),
                ));
            }
        }
        let deterministic = (0..valuation.len())
            .map(|m| {
                let set = ItemSet(m as u32);
                valuation[m] - set.iter().map(|i| prices[i]).sum::<f64>()
            })
            .collect();
        Ok(UtilityModel {
            names,
            valuation,
            prices,
            noise,
            deterministic,
            complementary,
        })
    }

    /// Replaces the noise specification of every item.
    pub fn with_noise(mut self, noise: Vec<NoiseSpec>) -> Result<Self, ModelError> {
        if noise.len() != self.num_items() {
            return Err(ModelError::Length {
                what: "noise specs",
                expected: self.num_items(),
                found: noise.len(),
            });
        }
        for (item, spec) in noise.iter().enumerate() {
            spec.validate()
                .map_err(|reason| ModelError::Noise { item, reason })?;
        }
        self.noise = noise;
        Ok(self)
    }

    #[inline]
    pub fn num_items(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn item_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn full_set(&self) -> ItemSet {
        ItemSet::full(self.num_items())
    }

    pub fn valuation(&self) -> &[f64] {
        &self.valuation
    }

    #[inline]
    pub fn value(&self, set: ItemSet) -> f64 {
        self.valuation[set.0 as usize]
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }

    pub fn noise(&self) -> &[NoiseSpec] {
        &self.noise
    }

    pub fn is_complementary(&self) -> bool {
        self.complementary
    }

    /// `V(I) - P(I)`, ignoring noise.
    #[inline]
    pub fn deterministic_utility(&self, set: ItemSet) -> f64 {
        self.deterministic[set.0 as usize]
    }

    #[inline]
    pub fn utility(&self, w: &NoiseWorld, set: ItemSet) -> f64 {
        let mut u = self.deterministic[set.0 as usize];
        for i in set.iter() {
            u += w.0[i];
        }
        u
    }

    /// Utility table over every subset for a fixed noise world.
    pub fn utility_table(&self, w: &NoiseWorld) -> Vec<f64> {
        (0..self.valuation.len() as u32)
            .map(|m| self.utility(w, ItemSet(m)))
            .collect()
    }

    pub fn check_supermodular(&self) -> Vec<SupermodularViolation> {
        supermodularity_violations(&self.valuation, self.num_items())
    }

    pub fn check_monotone(&self) -> Vec<MonotoneViolation> {
        monotonicity_violations(&self.valuation, self.num_items())
    }

    pub fn sample_noise_world<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseWorld {
        NoiseWorld(self.noise.iter().map(|spec| spec.sample(rng)).collect())
    }

    /// Every noise world with positive probability, when all items have
    /// finite-support noise.
    pub fn enumerate_noise_worlds(&self) -> Option<Vec<(f64, NoiseWorld)>> {
        let supports: Vec<Vec<(f64, f64)>> = self
            .noise
            .iter()
            .map(NoiseSpec::support)
            .collect::<Option<_>>()?;
        let mut worlds = vec![(1.0, Vec::with_capacity(supports.len()))];
        for sup in &supports {
            let mut next = Vec::with_capacity(worlds.len() * sup.len());
            for (p, w) in &worlds {
                for &(v, q) in sup {
                    if q > 0.0 {
                        let mut w2: Vec<f64> = w.clone();
                        w2.push(v);
                        next.push((p * q, w2));
                    }
                }
            }
            worlds = next;
        }
        Some(
            worlds
                .into_iter()
                .map(|(p, w)| (p, NoiseWorld(w)))
                .collect(),
        )
    }

    /// The itemset a node adopts given its desire set and what it already
    /// adopted: the utility maximizer among supersets of `prior` inside
    /// `desire` with non-negative utility, ties going to the larger set.
    /// `prior` itself is always a candidate.
    pub fn best_adoption(
        &self,
        w: &NoiseWorld,
        desire: ItemSet,
        prior: ItemSet,
    ) -> Result<ItemSet, ModelError> {
        if !prior.is_subset(desire) {
            return Err(ModelError::PriorNotInDesire { prior, desire });
        }
        let free = desire.difference(prior);
        let mut best = prior;
        let mut best_u = self.utility(w, prior);
        let mut rival: Option<ItemSet> = None;
        for sub in free.subsets() {
            if sub.is_empty() {
                continue;
            }
            let cand = prior.union(sub);
            let u = self.utility(w, cand);
            if u < 0.0 {
                continue;
            }
            if u > best_u || (u == best_u && cand.len() > best.len()) {
                best = cand;
                best_u = u;
                rival = None;
            } else if u == best_u && cand.len() == best.len() {
                rival = Some(cand);
            }
        }
        match rival {
            Some(r) => Err(ModelError::AmbiguousMaximizer(best, r)),
            None => Ok(best),
        }
    }

    /// Unique maximum-utility itemset over the whole universe, larger sets
    /// winning ties.
    pub fn maximal_itemset(&self, w: &NoiseWorld) -> Result<ItemSet, ModelError> {
        self.best_adoption(w, self.full_set(), ItemSet::EMPTY)
    }

    /// Closed-form GAP adoption probabilities of a two-item model.
    pub fn gaps_from_utilities(&self) -> Result<GapValues, ModelError> {
        if self.num_items() != 2 {
            return Err(ModelError::NeedsTwoItems("GAP conversion"));
        }
        let v = |m: u32| self.valuation[m as usize];
        let (pa, pb) = (self.prices[0], self.prices[1]);
        let (na, nb) = (&self.noise[0], &self.noise[1]);
        Ok(GapValues {
            q_a_none: na.survival(pa - v(0b01)),
            q_a_b: na.survival(pa - (v(0b11) - v(0b10))),
            q_b_none: nb.survival(pb - v(0b10)),
            q_b_a: nb.survival(pb - (v(0b11) - v(0b01))),
        })
    }
}

fn default_names(s: usize) -> Vec<String> {
    (1..=s).map(|i| format!("i{i}")).collect()
}

fn check_prices(s: usize, prices: &[f64]) -> Result<(), ModelError> {
    if s == 0 || s > MAX_ITEMS {
        return Err(ModelError::ItemCount(s));
    }
    if prices.len() != s {
        return Err(ModelError::Length {
            what: "prices",
            expected: s,
            found: prices.len(),
        });
    }
    Ok(())
}

/// Additive model: every item contributes its own utility independently.
pub fn build_additive(utilities: &[f64], prices: &[f64]) -> Result<UtilityModel, ModelError> {
    let s = utilities.len();
    check_prices(s, prices)?;
    let valuation = (0..1u32 << s)
        .map(|m| {
            ItemSet(m)
                .iter()
                .map(|i| utilities[i] + prices[i])
                .sum::<f64>()
        })
        .collect();
    UtilityModel::new(
        default_names(s),
        valuation,
        prices.to_vec(),
        vec![NoiseSpec::Zero; s],
        true,
    )
}

/// Cone model: sets containing `core` have utility
/// `core_value + increment * (|S| - 1)`; every other nonempty set is valued
/// at zero, so its utility is minus its price.
pub fn build_cone(
    core: usize,
    core_value: f64,
    increment: f64,
    prices: &[f64],
) -> Result<UtilityModel, ModelError> {
    let s = prices.len();
    check_prices(s, prices)?;
    if core >= s {
        return Err(ModelError::Domain(format!(
            "core item {core} outside universe of {s}"
        )));
    }
    if core_value + prices[core] < 0.0 {
        return Err(ModelError::Domain(
            "core value below minus its price".into(),
        ));
    }
    if prices.iter().any(|p| increment + p < 0.0) {
        return Err(ModelError::Domain(
            "increment below minus an item price".into(),
        ));
    }
    let valuation = (0..1u32 << s)
        .map(|m| {
            let set = ItemSet(m);
            if set.contains(core) {
                let price: f64 = set.iter().map(|i| prices[i]).sum();
                core_value + increment * (set.len() - 1) as f64 + price
            } else {
                0.0
            }
        })
        .collect();
    UtilityModel::new(
        default_names(s),
        valuation,
        prices.to_vec(),
        vec![NoiseSpec::Zero; s],
        true,
    )
}

/// Level-wise random supermodular valuation.
///
/// Singletons get `max(0, price + U[-2, 2])`. For a set `A` of size `t >= 2`
/// and each `i` in `A`, the marginal of `i` is the largest realized marginal
/// of `i` over the `(t-2)`-subsets of `A - i`, plus a boost drawn from
/// `U[1, 5]`; `V(A)` is the best of `V(A - i)` plus that marginal.
pub fn build_levelwise<R: Rng + ?Sized>(
    rng: &mut R,
    s: usize,
    prices: &[f64],
) -> Result<UtilityModel, ModelError> {
    check_prices(s, prices)?;
    let jitter = Uniform::new_inclusive(-2.0, 2.0).expect("static bounds");
    let boost = Uniform::new_inclusive(1.0, 5.0).expect("static bounds");
    let mut v = vec![0.0f64; 1 << s];
    for i in 0..s {
        v[1 << i] = (prices[i] + jitter.sample(rng)).max(0.0);
    }
    // Ascending numeric order visits every subset before its supersets.
    for m in 1..1u32 << s {
        let a = ItemSet(m);
        if a.len() < 2 {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for i in a.iter() {
            let rest = a.without(i);
            let mut max_gain = f64::NEG_INFINITY;
            for j in rest.iter() {
                let b = rest.without(j);
                let gain = v[b.with(i).0 as usize] - v[b.0 as usize];
                max_gain = max_gain.max(gain);
            }
            let marginal = max_gain + boost.sample(rng);
            best = best.max(v[rest.0 as usize] + marginal);
        }
        v[m as usize] = best;
    }
    UtilityModel::new(
        default_names(s),
        v,
        prices.to_vec(),
        vec![NoiseSpec::Zero; s],
        true,
    )
}
