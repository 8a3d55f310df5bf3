//! Permutation primitives: rankings, Kendall tau distance, and the
//! decomposition of a full list into relevant/background components.
//!
//! Ranks are 1-based throughout (rank 1 = most preferred); entity indices are
//! 0-based. All operations here are pure functions on immutable values.

use std::cmp::Reverse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ln_factorial;

/// Index of an entity within a universe of `n` entities.
pub type EntityId = usize;

/// A full ranking list: `positions[i]` is the 1-based rank of entity `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct Ranking {
    positions: Vec<u32>,
}

impl Ranking {
    /// Build from per-entity positions; they must form a permutation of `1..=n`.
    pub fn from_positions(positions: Vec<u32>) -> Result<Self> {
        let n = positions.len();
        let mut seen = vec![false; n];
        for &p in &positions {
            if p < 1 || p as usize > n || seen[p as usize - 1] {
                return Err(Error::NotAPermutation(n));
            }
            seen[p as usize - 1] = true;
        }
        Ok(Self { positions })
    }

    /// Build from an order: `order[0]` is the rank-1 entity, and so on.
    pub fn from_order(order: &[EntityId]) -> Result<Self> {
        let n = order.len();
        let mut positions = vec![0u32; n];
        for (pos, &e) in order.iter().enumerate() {
            if e >= n || positions[e] != 0 {
                return Err(Error::NotAPermutation(n));
            }
            positions[e] = pos as u32 + 1;
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// 1-based rank of entity `i`.
    pub fn position(&self, i: EntityId) -> u32 {
        self.positions[i]
    }

    pub fn positions(&self) -> &[u32] {
        &self.positions
    }

    /// Entities sorted by ascending rank.
    pub fn order(&self) -> Vec<EntityId> {
        let mut order = vec![0; self.len()];
        for (e, &p) in self.positions.iter().enumerate() {
            order[p as usize - 1] = e;
        }
        order
    }
}

impl TryFrom<Vec<u32>> for Ranking {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Ranking::from_positions(v)
    }
}

impl From<Ranking> for Vec<u32> {
    fn from(r: Ranking) -> Self {
        r.positions
    }
}

/// A ranking of a subset of the universe. Unranked entities are simply absent
/// (`None`); the ranked cells form a permutation of `1..=k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartialRanking {
    ranks: Vec<Option<u32>>,
}

impl PartialRanking {
    pub fn from_ranks(ranks: Vec<Option<u32>>) -> Result<Self> {
        let k = ranks.iter().filter(|r| r.is_some()).count();
        let mut seen = vec![false; k];
        for r in ranks.iter().flatten() {
            let r = *r as usize;
            if r < 1 || r > k || seen[r - 1] {
                return Err(Error::InvalidPartial);
            }
            seen[r - 1] = true;
        }
        Ok(Self { ranks })
    }

    /// View a full ranking as a (complete) partial one.
    pub fn from_full(full: &Ranking) -> Self {
        Self {
            ranks: full.positions().iter().map(|&p| Some(p)).collect(),
        }
    }

    /// The projection of `full` onto `subset`: relative ranks of the subset.
    pub fn projection(full: &Ranking, subset: &[EntityId]) -> Self {
        let mut members: Vec<EntityId> = subset.to_vec();
        members.sort_unstable_by_key(|&e| full.position(e));
        let mut ranks = vec![None; full.len()];
        for (r, &e) in members.iter().enumerate() {
            ranks[e] = Some(r as u32 + 1);
        }
        Self { ranks }
    }

    /// Universe size.
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Number of ranked entities.
    pub fn ranked_count(&self) -> usize {
        self.ranks.iter().filter(|r| r.is_some()).count()
    }

    pub fn is_full(&self) -> bool {
        self.ranked_count() == self.len()
    }

    pub fn rank(&self, i: EntityId) -> Option<u32> {
        self.ranks[i]
    }

    pub fn ranks(&self) -> &[Option<u32>] {
        &self.ranks
    }

    /// Ranked entities in ascending rank order.
    pub fn ranked_in_order(&self) -> Vec<EntityId> {
        let mut out = vec![0; self.ranked_count()];
        for (e, r) in self.ranks.iter().enumerate() {
            if let Some(r) = r {
                out[*r as usize - 1] = e;
            }
        }
        out
    }

    /// Convert to a full ranking; fails if any entity is unranked.
    pub fn to_full(&self) -> Result<Ranking> {
        if !self.is_full() {
            return Err(Error::InvalidPartial);
        }
        Ranking::from_positions(self.ranks.iter().map(|r| r.unwrap()).collect())
    }
}

/// Per-entity group label: 0 for background, `k` in `1..=n1` for the entity
/// truly ranked `k`-th among the relevant ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct EnhancedIndicator {
    labels: Vec<u32>,
    n1: usize,
}

impl EnhancedIndicator {
    pub fn from_labels(labels: Vec<u32>) -> Result<Self> {
        let n1 = labels.iter().filter(|&&l| l > 0).count();
        let mut seen = vec![false; n1];
        for &l in &labels {
            if l == 0 {
                continue;
            }
            let l = l as usize;
            if l > n1 || seen[l - 1] {
                return Err(Error::InvalidIndicator(format!(
                    "nonzero labels must form a permutation of 1..={n1}"
                )));
            }
            seen[l - 1] = true;
        }
        Ok(Self { labels, n1 })
    }

    /// The canonical indicator with entities `0..n1` relevant in index order.
    pub fn leading(n: usize, n1: usize) -> Self {
        assert!(n1 <= n, "n1 must not exceed n");
        let labels = (0..n)
            .map(|i| if i < n1 { i as u32 + 1 } else { 0 })
            .collect();
        Self { labels, n1 }
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.labels.len() - self.n1
    }

    /// Label of entity `i` (0 when background).
    pub fn label(&self, i: EntityId) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn is_relevant(&self, i: EntityId) -> bool {
        self.labels[i] > 0
    }

    /// Relevant entities in ascending entity order.
    pub fn relevant_entities(&self) -> Vec<EntityId> {
        (0..self.n()).filter(|&i| self.labels[i] > 0).collect()
    }

    /// Background entities in ascending entity order.
    pub fn background_entities(&self) -> Vec<EntityId> {
        (0..self.n()).filter(|&i| self.labels[i] == 0).collect()
    }

    /// Entity holding each positive label: element `r` is the entity with
    /// label `r + 1`.
    pub fn relevant_by_rank(&self) -> Vec<EntityId> {
        let mut out = vec![0; self.n1];
        for (e, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1] = e;
            }
        }
        out
    }
}

impl TryFrom<Vec<u32>> for EnhancedIndicator {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        EnhancedIndicator::from_labels(v)
    }
}

impl From<EnhancedIndicator> for Vec<u32> {
    fn from(ind: EnhancedIndicator) -> Self {
        ind.labels
    }
}

/// The three components a full list splits into, given an indicator.
///
/// All three vectors are aligned with the ascending-entity-id order of the
/// relevant (`tau1`) and background (`tau01`, `tau0`) entities:
///
/// - `tau1`: relative ranks of the relevant entities among themselves;
/// - `tau01`: per-background-entity slot in `1..=n1+1` (the relative reverse
///   rank among itself plus all relevant entities; slot `n1+1` precedes every
///   relevant entity, slot 1 follows them all);
/// - `tau0`: relative ranks of the background entities among themselves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decomposition {
    pub tau1: Vec<u32>,
    pub tau01: Vec<u32>,
    pub tau0: Vec<u32>,
}

/// Relative ranks of `subset` entities under `tau`, aligned with `subset`.
fn relative_ranks(tau: &Ranking, subset: &[EntityId]) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..subset.len()).collect();
    idx.sort_unstable_by_key(|&j| tau.position(subset[j]));
    let mut out = vec![0u32; subset.len()];
    for (r, &j) in idx.iter().enumerate() {
        out[j] = r as u32 + 1;
    }
    out
}

/// Split `tau` into `(tau1, tau01, tau0)` given the indicator.
pub fn decompose(tau: &Ranking, ind: &EnhancedIndicator) -> Result<Decomposition> {
    if tau.len() != ind.n() {
        return Err(Error::EntityMismatch {
            left: tau.len(),
            right: ind.n(),
        });
    }
    let relevant = ind.relevant_entities();
    let background = ind.background_entities();
    let n1 = relevant.len() as u32;

    let tau1 = relative_ranks(tau, &relevant);
    let tau0 = relative_ranks(tau, &background);

    let mut rel_pos: Vec<u32> = relevant.iter().map(|&e| tau.position(e)).collect();
    rel_pos.sort_unstable();
    let tau01 = background
        .iter()
        .map(|&e| {
            let before = rel_pos.partition_point(|&q| q < tau.position(e)) as u32;
            n1 + 1 - before
        })
        .collect();

    Ok(Decomposition { tau1, tau01, tau0 })
}

/// Rebuild the unique full ranking whose decomposition is `d`.
///
/// Relevant entities are ordered by `tau1`; background entities fall into the
/// gap after `n1 + 1 - slot` relevant entities, ordered within and across
/// equal slots by `tau0`. Fails if `(tau01, tau0)` are incompatible, i.e. if
/// some background entity in a later gap carries a smaller `tau0` rank.
pub fn compose(d: &Decomposition, ind: &EnhancedIndicator) -> Result<Ranking> {
    let n1 = ind.n1();
    let n0 = ind.n0();
    if d.tau1.len() != n1 || d.tau01.len() != n0 || d.tau0.len() != n0 {
        return Err(Error::EntityMismatch {
            left: d.tau1.len() + d.tau01.len(),
            right: n1 + n0,
        });
    }
    check_permutation(&d.tau1, n1)?;
    check_permutation(&d.tau0, n0)?;
    if d.tau01.iter().any(|&s| s < 1 || s as usize > n1 + 1) {
        return Err(Error::Incompatible(format!(
            "slot values must lie in 1..={}",
            n1 + 1
        )));
    }

    let relevant = ind.relevant_entities();
    let background = ind.background_entities();

    let mut rel_order = vec![0; n1];
    for (j, &r) in d.tau1.iter().enumerate() {
        rel_order[r as usize - 1] = relevant[j];
    }

    // Background entities in full-list order: descending slot, then tau0.
    let mut bg_idx: Vec<usize> = (0..n0).collect();
    bg_idx.sort_unstable_by_key(|&j| (Reverse(d.tau01[j]), d.tau0[j]));
    for (pos, &j) in bg_idx.iter().enumerate() {
        if d.tau0[j] as usize != pos + 1 {
            return Err(Error::Incompatible(
                "tau0 ranks a lower-slot background entity before a higher-slot one".into(),
            ));
        }
    }

    let mut order = Vec::with_capacity(n1 + n0);
    let mut bg_iter = bg_idx.iter().peekable();
    for gap in 0..=n1 {
        let slot = (n1 + 1 - gap) as u32;
        while let Some(&&j) = bg_iter.peek() {
            if d.tau01[j] == slot {
                order.push(background[j]);
                bg_iter.next();
            } else {
                break;
            }
        }
        if gap < n1 {
            order.push(rel_order[gap]);
        }
    }
    Ranking::from_order(&order)
}

fn check_permutation(v: &[u32], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &x in v {
        if x < 1 || x as usize > n || seen[x as usize - 1] {
            return Err(Error::NotAPermutation(n));
        }
        seen[x as usize - 1] = true;
    }
    Ok(())
}

/// Kendall tau distance (number of discordant pairs) between two full
/// rankings of the same entity set.
pub fn kendall_tau(a: &Ranking, b: &Ranking) -> Result<u64> {
    if a.len() != b.len() {
        return Err(Error::EntityMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(kendall_tau_ranks(a.positions(), b.positions()))
}

/// Kendall tau distance between two aligned rank vectors (element `i` of each
/// slice is the rank of the same entity). Both must be permutations.
pub fn kendall_tau_ranks(a: &[u32], b: &[u32]) -> u64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by_key(|&i| a[i]);
    let mut seq: Vec<u32> = idx.into_iter().map(|i| b[i]).collect();
    let mut buf = vec![0u32; n];
    count_inversions(&mut seq, &mut buf)
}

/// Merge-sort inversion count; `buf` is scratch of the same length.
fn count_inversions(seq: &mut [u32], buf: &mut [u32]) -> u64 {
    let n = seq.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left, right) = seq.split_at_mut(mid);
    let mut inv = count_inversions(left, &mut buf[..mid]) + count_inversions(right, &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, 0, 0);
    while i < left.len() && j < right.len() {
        if left[i] <= right[j] {
            buf[k] = left[i];
            i += 1;
        } else {
            buf[k] = right[j];
            j += 1;
            inv += (left.len() - i) as u64;
        }
        k += 1;
    }
    while i < left.len() {
        buf[k] = left[i];
        i += 1;
        k += 1;
    }
    while j < right.len() {
        buf[k] = right[j];
        j += 1;
        k += 1;
    }
    seq.copy_from_slice(&buf[..n]);
    inv
}

/// Number of background orderings compatible with a slot assignment: the
/// product of the factorials of the slot multiplicities.
pub fn compatible_count(tau01: &[u32]) -> Result<u128> {
    let mut counts = std::collections::BTreeMap::new();
    for &s in tau01 {
        if s < 1 {
            return Err(Error::Incompatible("slot values must be >= 1".into()));
        }
        *counts.entry(s).or_insert(0u128) += 1;
    }
    let mut total: u128 = 1;
    for (_, c) in counts {
        for f in 2..=c {
            total = total.checked_mul(f).ok_or(Error::CountOverflow)?;
        }
    }
    Ok(total)
}

/// `ln` of [`compatible_count`], safe for large multiplicities.
pub fn log_compatible_count(tau01: &[u32]) -> f64 {
    let max_slot = tau01.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0usize; max_slot + 1];
    for &s in tau01 {
        counts[s as usize] += 1;
    }
    counts.iter().map(|&c| ln_factorial(c)).sum()
}

/// Does the relative order of `partial`'s ranked entities in `full` equal
/// `partial` itself?
pub fn is_compatible(full: &Ranking, partial: &PartialRanking) -> bool {
    debug_assert_eq!(full.len(), partial.len());
    let ranked = partial.ranked_in_order();
    ranked
        .windows(2)
        .all(|w| full.position(w[0]) < full.position(w[1]))
}

/// A ranking whose tail is an unordered tied block: entities `order[..tied_from]`
/// hold strict ranks `1..=tied_from`, and everything after ties behind them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TiedRanking {
    order: Vec<EntityId>,
    tied_from: usize,
}

impl TiedRanking {
    pub fn new(order: Vec<EntityId>, tied_from: usize) -> Result<Self> {
        let n = order.len();
        if tied_from > n {
            return Err(Error::InvalidConfig(
                "tied_from must not exceed the number of entities".into(),
            ));
        }
        let mut seen = vec![false; n];
        for &e in &order {
            if e >= n || seen[e] {
                return Err(Error::NotAPermutation(n));
            }
            seen[e] = true;
        }
        Ok(Self { order, tied_from })
    }

    /// A fully strict ranking (no tied tail).
    pub fn from_full(full: &Ranking) -> Self {
        let order = full.order();
        let tied_from = order.len();
        Self { order, tied_from }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[EntityId] {
        &self.order
    }

    pub fn tied_from(&self) -> usize {
        self.tied_from
    }

    /// Strict 0-based position of entity `e`, or `None` if it sits in the
    /// tied tail.
    pub fn strict_position(&self, e: EntityId) -> Option<usize> {
        let idx = self.order.iter().position(|&x| x == e)?;
        (idx < self.tied_from).then_some(idx)
    }
}

/// All rankings of `n` entities. Intended for exhaustive checks at small `n`.
pub fn all_rankings(n: usize) -> Vec<Ranking> {
    let mut out = Vec::new();
    let mut order: Vec<EntityId> = (0..n).collect();
    permute(&mut order, 0, &mut |o| {
        out.push(Ranking::from_order(o).expect("permutation"));
    });
    out
}

/// All indicator vectors for `n` entities with `n1` relevant ones.
pub fn all_indicators(n: usize, n1: usize) -> Vec<EnhancedIndicator> {
    let mut out = Vec::new();
    let mut subset = Vec::with_capacity(n1);
    choose(n, n1, 0, &mut subset, &mut |s| {
        let mut labels_order: Vec<usize> = (0..n1).collect();
        permute(&mut labels_order, 0, &mut |perm| {
            let mut labels = vec![0u32; n];
            for (j, &e) in s.iter().enumerate() {
                labels[e] = perm[j] as u32 + 1;
            }
            out.push(EnhancedIndicator::from_labels(labels).expect("valid labels"));
        });
    });
    out
}

fn permute<T: Copy>(items: &mut [T], k: usize, visit: &mut impl FnMut(&[T])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

fn choose(n: usize, k: usize, start: usize, acc: &mut Vec<usize>, visit: &mut impl FnMut(&[usize])) {
    if acc.len() == k {
        visit(acc);
        return;
    }
    for i in start..n {
        acc.push(i);
        choose(n, k, i + 1, acc, visit);
        acc.pop();
    }
}
