//! Internal cached-statistics engine shared by the Gibbs sampler, the MLE
//! optimizer, and the partial-list routines.
//!
//! For each list it caches the indicator-dependent quantities (`log A*`,
//! `log B*`, the relevant-part Kendall distance, and per-entity slots) and
//! updates them incrementally under the two indicator moves:
//!
//! - swapping the labels of two adjacently-ranked relevant entities, which
//!   only shifts the distance by one;
//! - exchanging the rank-`n1` relevant entity with a background entity, which
//!   shifts every background slot by at most one.
//!
//! Lists carry a weight and a gamma-group index so that Monte Carlo EM can
//! treat several completions of the same observed list as fractional copies
//! sharing one quality parameter.

use crate::model::{log_power_law_norm, log_z_mallows};
#[cfg(test)]
use crate::model::SuffStats;
use crate::numeric::ln_factorial;
use crate::rank::{EnhancedIndicator, EntityId, Ranking};

pub(crate) struct ListEntry {
    /// 1-based position of each entity in this list.
    pub positions: Vec<u32>,
    pub weight: f64,
    pub gamma_group: usize,
    /// Slot of each entity: `n1 + 1 - #relevant ranked before it`; 0 for
    /// relevant entities.
    pub slot_of: Vec<u32>,
    /// Multiplicity of each slot value (index = slot).
    pub counts: Vec<u32>,
    pub log_a: f64,
    pub log_b: f64,
    pub dist: u64,
}

pub(crate) struct StatsEngine {
    pub n: usize,
    pub n1: usize,
    pub labels: Vec<u32>,
    /// Entity holding each positive label (index = label - 1).
    pub rel_by_rank: Vec<EntityId>,
    pub bg_entities: Vec<EntityId>,
    bg_index: Vec<usize>,
    pub lists: Vec<ListEntry>,
    ln_slot: Vec<f64>,
    scratch_counts: Vec<u32>,
}

/// Stat changes of one list under a proposed exchange move.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ExchangeStats {
    pub log_a: f64,
    pub log_b: f64,
    pub dist: u64,
}

pub(crate) struct GroupSums {
    pub weight: f64,
    pub log_b: f64,
    pub dist: f64,
}

impl StatsEngine {
    /// Engine over plain lists: unit weights, gamma group `k` for list `k`.
    pub fn new(rankings: &[Ranking], ind: &EnhancedIndicator) -> Self {
        let weighted: Vec<(Vec<u32>, f64, usize)> = rankings
            .iter()
            .enumerate()
            .map(|(k, r)| (r.positions().to_vec(), 1.0, k))
            .collect();
        Self::with_weights(weighted, ind)
    }

    /// Engine over weighted lists, e.g. Monte Carlo completions.
    pub fn with_weights(
        lists: Vec<(Vec<u32>, f64, usize)>,
        ind: &EnhancedIndicator,
    ) -> Self {
        let n = ind.n();
        let n1 = ind.n1();
        let mut engine = Self {
            n,
            n1,
            labels: ind.labels().to_vec(),
            rel_by_rank: ind.relevant_by_rank(),
            bg_entities: ind.background_entities(),
            bg_index: vec![usize::MAX; n],
            lists: lists
                .into_iter()
                .map(|(positions, weight, gamma_group)| ListEntry {
                    positions,
                    weight,
                    gamma_group,
                    slot_of: vec![0; n],
                    counts: vec![0; n1 + 2],
                    log_a: 0.0,
                    log_b: 0.0,
                    dist: 0,
                })
                .collect(),
            ln_slot: (0..=(n1 + 1)).map(|s| (s.max(1) as f64).ln()).collect(),
            scratch_counts: vec![0; n1 + 2],
        };
        for (j, &e) in engine.bg_entities.iter().enumerate() {
            engine.bg_index[e] = j;
        }
        for k in 0..engine.lists.len() {
            engine.rebuild_list(k);
        }
        engine
    }

    pub fn indicator(&self) -> EnhancedIndicator {
        EnhancedIndicator::from_labels(self.labels.clone()).expect("labels stay valid")
    }

    /// Recompute all caches of list `k` from scratch.
    pub fn rebuild_list(&mut self, k: usize) {
        let n1 = self.n1;
        let list = &mut self.lists[k];
        let pos = &list.positions;

        list.dist = 0;
        for r in 0..n1 {
            let pr = pos[self.rel_by_rank[r]];
            for s in r + 1..n1 {
                if pos[self.rel_by_rank[s]] < pr {
                    list.dist += 1;
                }
            }
        }

        let mut rel_pos: Vec<u32> = self.rel_by_rank.iter().map(|&e| pos[e]).collect();
        rel_pos.sort_unstable();
        list.counts.iter_mut().for_each(|c| *c = 0);
        list.log_b = 0.0;
        for e in 0..self.n {
            list.slot_of[e] = 0;
        }
        for &e in &self.bg_entities {
            let before = rel_pos.partition_point(|&q| q < pos[e]);
            let slot = (n1 + 1 - before) as u32;
            list.slot_of[e] = slot;
            list.counts[slot as usize] += 1;
            list.log_b += self.ln_slot[slot as usize];
        }
        list.log_a = list.counts.iter().map(|&c| ln_factorial(c as usize)).sum();
    }

    /// Replace list `k`'s ranking (partial-list imputation) and rebuild it.
    pub fn replace_list(&mut self, k: usize, ranking: &Ranking) {
        self.lists[k].positions.copy_from_slice(ranking.positions());
        self.rebuild_list(k);
    }

    pub fn list_positions(&self, k: usize) -> &[u32] {
        &self.lists[k].positions
    }

    /// Distance change of list `k` when the labels of the rank-`r+1` and
    /// rank-`r+2` entities swap (0-based `r`).
    pub fn adjacent_dist_delta(&self, k: usize, r: usize) -> i64 {
        let a = self.rel_by_rank[r];
        let b = self.rel_by_rank[r + 1];
        let pos = &self.lists[k].positions;
        if pos[a] < pos[b] {
            1
        } else {
            -1
        }
    }

    /// Change in the indicator-dependent part of the weighted log-likelihood
    /// under an adjacent-label swap at rank index `r`.
    pub fn adjacent_delta(&self, r: usize, gammas: &[f64], phi: f64) -> f64 {
        let mut delta = 0.0;
        for (k, list) in self.lists.iter().enumerate() {
            let dd = self.adjacent_dist_delta(k, r) as f64;
            delta -= list.weight * phi * gammas[list.gamma_group] * dd;
        }
        delta
    }

    pub fn apply_adjacent(&mut self, r: usize) {
        for k in 0..self.lists.len() {
            let dd = self.adjacent_dist_delta(k, r);
            let list = &mut self.lists[k];
            list.dist = (list.dist as i64 + dd) as u64;
        }
        let a = self.rel_by_rank[r];
        let b = self.rel_by_rank[r + 1];
        self.labels.swap(a, b);
        self.rel_by_rank.swap(r, r + 1);
    }

    /// Stats of list `k` after exchanging the rank-`n1` relevant entity `a`
    /// with background entity `b`. Pure except for an internal scratch
    /// buffer.
    pub fn exchange_stats(&mut self, k: usize, a: EntityId, b: EntityId) -> ExchangeStats {
        let n1 = self.n1;
        let list = &self.lists[k];
        let pos = &list.positions;
        let (pa, pb) = (pos[a], pos[b]);

        let mut ddist: i64 = 0;
        for r in 0..n1 - 1 {
            let pr = pos[self.rel_by_rank[r]];
            ddist += (pr > pb) as i64 - (pr > pa) as i64;
        }

        let counts = &mut self.scratch_counts;
        counts.iter_mut().for_each(|c| *c = 0);
        let mut log_b = 0.0;
        let mut cnt_a = (pb < pa) as usize;
        for r in 0..n1 - 1 {
            cnt_a += (pos[self.rel_by_rank[r]] < pa) as usize;
        }
        let slot_a = (n1 + 1 - cnt_a) as u32;
        counts[slot_a as usize] += 1;
        log_b += self.ln_slot[slot_a as usize];
        for &e in &self.bg_entities {
            if e == b {
                continue;
            }
            let pe = pos[e];
            let slot =
                (list.slot_of[e] as i64 + (pa < pe) as i64 - (pb < pe) as i64) as usize;
            counts[slot] += 1;
            log_b += self.ln_slot[slot];
        }
        let log_a = counts.iter().map(|&c| ln_factorial(c as usize)).sum();
        ExchangeStats {
            log_a,
            log_b,
            dist: (list.dist as i64 + ddist) as u64,
        }
    }

    /// Change in the indicator-dependent part of the weighted log-likelihood
    /// under the exchange move `a <-> b`.
    pub fn exchange_delta(&mut self, a: EntityId, b: EntityId, gammas: &[f64], phi: f64) -> f64 {
        let mut delta = 0.0;
        for k in 0..self.lists.len() {
            let new = self.exchange_stats(k, a, b);
            let list = &self.lists[k];
            let g = gammas[list.gamma_group];
            delta += list.weight
                * (-(new.log_a - list.log_a)
                    - g * (new.log_b - list.log_b)
                    - phi * g * (new.dist as f64 - list.dist as f64));
        }
        delta
    }

    pub fn apply_exchange(&mut self, a: EntityId, b: EntityId) {
        let n1 = self.n1;
        for k in 0..self.lists.len() {
            let new = self.exchange_stats(k, a, b);
            let list = &mut self.lists[k];
            let pos = &list.positions;
            let (pa, pb) = (pos[a], pos[b]);
            for &e in &self.bg_entities {
                if e == b {
                    continue;
                }
                let pe = pos[e];
                list.slot_of[e] =
                    (list.slot_of[e] as i64 + (pa < pe) as i64 - (pb < pe) as i64) as u32;
            }
            let mut cnt_a = (pb < pa) as usize;
            for r in 0..n1 - 1 {
                cnt_a += (pos[self.rel_by_rank[r]] < pa) as usize;
            }
            list.slot_of[a] = (n1 + 1 - cnt_a) as u32;
            list.slot_of[b] = 0;
            list.counts.iter_mut().for_each(|c| *c = 0);
            for e in 0..self.n {
                let s = list.slot_of[e];
                if s > 0 {
                    list.counts[s as usize] += 1;
                }
            }
            list.log_a = new.log_a;
            list.log_b = new.log_b;
            list.dist = new.dist;
        }
        let label_a = self.labels[a];
        debug_assert_eq!(label_a as usize, n1);
        self.labels[b] = label_a;
        self.labels[a] = 0;
        self.rel_by_rank[n1 - 1] = b;
        let j = self.bg_index[b];
        self.bg_entities[j] = a;
        self.bg_index[a] = j;
        self.bg_index[b] = usize::MAX;
    }

    /// Weighted total of the gamma-free factor `log A*`.
    pub fn total_log_a(&self) -> f64 {
        self.lists.iter().map(|l| l.weight * l.log_a).sum()
    }

    /// Per-gamma-group sums of weight, `log B*`, and distance.
    pub fn group_sums(&self, n_groups: usize) -> Vec<GroupSums> {
        let mut out: Vec<GroupSums> = (0..n_groups)
            .map(|_| GroupSums {
                weight: 0.0,
                log_b: 0.0,
                dist: 0.0,
            })
            .collect();
        for list in &self.lists {
            let g = &mut out[list.gamma_group];
            g.weight += list.weight;
            g.log_b += list.weight * list.log_b;
            g.dist += list.weight * list.dist as f64;
        }
        out
    }

    /// Weighted joint log-likelihood at `(gammas, phi)` under the current
    /// indicator.
    pub fn weighted_log_lik(&self, gammas: &[f64], phi: f64) -> f64 {
        let n0 = (self.n - self.n1) as f64;
        let mut total = 0.0;
        let mut group_weight = vec![0.0; gammas.len()];
        for list in &self.lists {
            let g = gammas[list.gamma_group];
            total += list.weight
                * (-list.log_a - g * list.log_b - phi * g * list.dist as f64);
            group_weight[list.gamma_group] += list.weight;
        }
        for (g, &w) in gammas.iter().zip(&group_weight) {
            if w > 0.0 {
                total -= w * (n0 * log_power_law_norm(*g, self.n1) + log_z_mallows(self.n1, phi * *g));
            }
        }
        total
    }

    /// First-improvement hill climb over the indicator move set, with an
    /// optional covariate adjustment for exchange moves. Returns the number
    /// of applied moves. Moves are scanned in a fixed order; pass an RNG to
    /// shuffle the scan order per pass instead.
    pub fn hill_climb(
        &mut self,
        gammas: &[f64],
        phi: f64,
        covariate: Option<(&[Vec<f64>], &[f64])>,
        max_passes: usize,
    ) -> usize {
        self.hill_climb_impl(
            gammas,
            phi,
            covariate,
            max_passes,
            None::<&mut rand_chacha::ChaCha8Rng>,
        )
    }

    pub fn hill_climb_shuffled(
        &mut self,
        gammas: &[f64],
        phi: f64,
        covariate: Option<(&[Vec<f64>], &[f64])>,
        max_passes: usize,
        rng: &mut impl rand::Rng,
    ) -> usize {
        self.hill_climb_impl(gammas, phi, covariate, max_passes, Some(rng))
    }

    fn hill_climb_impl(
        &mut self,
        gammas: &[f64],
        phi: f64,
        covariate: Option<(&[Vec<f64>], &[f64])>,
        max_passes: usize,
        mut rng: Option<&mut impl rand::Rng>,
    ) -> usize {
        const MIN_GAIN: f64 = 1e-9;
        let n1 = self.n1;
        let mut applied = 0;
        let adj_moves = n1.saturating_sub(1);
        for _ in 0..max_passes {
            let mut improved = false;
            let mut moves: Vec<usize> = (0..adj_moves + self.bg_entities.len()).collect();
            if let Some(rng) = rng.as_deref_mut() {
                for i in (1..moves.len()).rev() {
                    moves.swap(i, rng.gen_range(0..=i));
                }
            }
            for mv in moves {
                if mv < adj_moves {
                    if self.adjacent_delta(mv, gammas, phi) > MIN_GAIN {
                        self.apply_adjacent(mv);
                        applied += 1;
                        improved = true;
                    }
                } else {
                    let a = self.rel_by_rank[n1 - 1];
                    // Index into the background list; its occupant may have
                    // changed since the pass began, which is fine: it is
                    // still a valid move.
                    let b = self.bg_entities[mv - adj_moves];
                    let mut delta = self.exchange_delta(a, b, gammas, phi);
                    if let Some((x, psi)) = covariate {
                        delta += x[b].iter().zip(psi).map(|(v, p)| v * p).sum::<f64>()
                            - x[a].iter().zip(psi).map(|(v, p)| v * p).sum::<f64>();
                    }
                    if delta > MIN_GAIN {
                        self.apply_exchange(a, b);
                        applied += 1;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        applied
    }

    /// Validate every cache against a from-scratch computation (tests only).
    #[cfg(test)]
    pub fn assert_consistent(&self) {
        let ind = self.indicator();
        for list in &self.lists {
            let tau = Ranking::from_positions(list.positions.clone()).unwrap();
            let stats = SuffStats::compute(&tau, &ind).unwrap();
            assert!(
                (stats.log_a - list.log_a).abs() < 1e-9,
                "log_a cache diverged"
            );
            assert!(
                (stats.log_b - list.log_b).abs() < 1e-9,
                "log_b cache diverged"
            );
            assert_eq!(stats.dist, list.dist, "dist cache diverged");
        }
    }
}
