//! The probability model: normalizing constants, per-list and joint
//! log-likelihood, generative sampling, covariate prior, and the hierarchical
//! quality prior.
//!
//! A list `tau` with indicator `ind`, common factor `phi`, and ranker quality
//! `gamma_k` has log-likelihood
//!
//! ```text
//! -log A* - gamma_k * log B* - n0 * log C* - phi * gamma_k * d - log Z(phi * gamma_k)
//! ```
//!
//! where `A*` counts the background orderings compatible with the slot
//! assignment, `B*` is the product of background slot values, `C*` is the
//! truncated power-law normalizer, `d` is the Kendall distance of the
//! relevant part from the center defined by the indicator, and `Z` is the
//! Mallows normalizer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{ln_factorial, ln_one_minus_exp_neg, ln_one_plus_exp};
use crate::rank::{compose, Decomposition, EnhancedIndicator, Ranking};

/// Model parameters: indicator, common factor, and per-ranker qualities.
#[derive(Clone, Debug, PartialEq)]
pub struct PamaParams {
    pub ind: EnhancedIndicator,
    pub phi: f64,
    pub gamma: Vec<f64>,
}

impl PamaParams {
    pub fn new(ind: EnhancedIndicator, phi: f64, gamma: Vec<f64>) -> Result<Self> {
        if !(phi >= 0.0) {
            return Err(Error::InvalidConfig("phi must be >= 0".into()));
        }
        if gamma.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::InvalidConfig("every gamma must be >= 0".into()));
        }
        Ok(Self { ind, phi, gamma })
    }

    pub fn m(&self) -> usize {
        self.gamma.len()
    }
}

/// Entity covariates with logistic coefficients for the relevance prior.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateModel {
    /// `n x p` row-major covariate matrix.
    pub x: Vec<Vec<f64>>,
    pub psi: Vec<f64>,
}

impl CovariateModel {
    pub fn new(x: Vec<Vec<f64>>, psi: Vec<f64>) -> Result<Self> {
        let p = psi.len();
        if x.iter().any(|row| row.len() != p) {
            return Err(Error::DimensionMismatch(format!(
                "every covariate row must have {p} columns"
            )));
        }
        Ok(Self { x, psi })
    }
}

/// Exponential hyperprior on the ranker qualities: density `alpha * e^{-alpha * gamma}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HyperPrior {
    pub alpha: f64,
}

impl HyperPrior {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidConfig("alpha must be > 0".into()));
        }
        Ok(Self { alpha })
    }
}

/// `log Z_n1(theta)` for the Mallows model under Kendall distance:
/// `prod_{t=2}^{n1} (1 - e^{-t theta}) / (1 - e^{-theta})^{n1-1}`,
/// with the `theta -> 0` limit `log(n1!)`.
pub fn log_z_mallows(n1: usize, theta: f64) -> f64 {
    if n1 <= 1 {
        return 0.0;
    }
    if theta < 1e-8 {
        return ln_factorial(n1);
    }
    let mut s = 0.0;
    for t in 2..=n1 {
        s += ln_one_minus_exp_neg(t as f64 * theta);
    }
    s - (n1 as f64 - 1.0) * ln_one_minus_exp_neg(theta)
}

/// `log sum_{t=1}^{n1+1} t^{-gamma}`, the truncated power-law normalizer.
pub fn log_power_law_norm(gamma: f64, n1: usize) -> f64 {
    let mut s = 0.0;
    for t in 1..=(n1 + 1) {
        s += (-gamma * (t as f64).ln()).exp();
    }
    s.ln()
}

/// The five log-scale factors of a single list's likelihood.
///
/// `log_d` is the Kendall distance of the relevant part from the indicator
/// center (a nonnegative integer stored as `f64`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelTerms {
    pub log_a: f64,
    pub log_b: f64,
    pub log_c: f64,
    pub log_d: f64,
    pub log_e: f64,
}

impl ModelTerms {
    pub fn compute(
        tau: &Ranking,
        ind: &EnhancedIndicator,
        phi: f64,
        gamma_k: f64,
    ) -> Result<Self> {
        let stats = SuffStats::compute(tau, ind)?;
        Ok(Self {
            log_a: stats.log_a,
            log_b: stats.log_b,
            log_c: log_power_law_norm(gamma_k, ind.n1()),
            log_d: stats.dist as f64,
            log_e: log_z_mallows(ind.n1(), phi * gamma_k),
        })
    }
}

/// Indicator-dependent sufficient statistics of one list: `log A*`, `log B*`,
/// and the Kendall distance of the relevant part from the indicator center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuffStats {
    pub log_a: f64,
    pub log_b: f64,
    pub dist: u64,
}

impl SuffStats {
    pub fn compute(tau: &Ranking, ind: &EnhancedIndicator) -> Result<Self> {
        if tau.len() != ind.n() {
            return Err(Error::EntityMismatch {
                left: tau.len(),
                right: ind.n(),
            });
        }
        let n1 = ind.n1();
        let rel_by_rank = ind.relevant_by_rank();

        // Kendall distance of the relevant part from the indicator center:
        // inversions of the position sequence taken in label order.
        let mut dist = 0u64;
        for r in 0..n1 {
            let pr = tau.position(rel_by_rank[r]);
            for s in r + 1..n1 {
                if tau.position(rel_by_rank[s]) < pr {
                    dist += 1;
                }
            }
        }

        let mut rel_pos: Vec<u32> = rel_by_rank.iter().map(|&e| tau.position(e)).collect();
        rel_pos.sort_unstable();
        let mut counts = vec![0usize; n1 + 2];
        let mut log_b = 0.0;
        for e in 0..ind.n() {
            if ind.is_relevant(e) {
                continue;
            }
            let before = rel_pos.partition_point(|&q| q < tau.position(e));
            let slot = n1 + 1 - before;
            counts[slot] += 1;
            log_b += (slot as f64).ln();
        }
        let log_a = counts.iter().map(|&c| ln_factorial(c)).sum();
        Ok(Self { log_a, log_b, dist })
    }
}

/// Log-likelihood of one list under `(ind, phi, gamma_k)`.
pub fn log_lik_single(
    tau: &Ranking,
    ind: &EnhancedIndicator,
    phi: f64,
    gamma_k: f64,
) -> Result<f64> {
    let stats = SuffStats::compute(tau, ind)?;
    let n0 = ind.n0() as f64;
    Ok(log_lik_from_stats(&stats, ind.n1(), n0, phi, gamma_k))
}

/// Assemble the log-likelihood from precomputed sufficient statistics.
pub(crate) fn log_lik_from_stats(
    stats: &SuffStats,
    n1: usize,
    n0: f64,
    phi: f64,
    gamma_k: f64,
) -> f64 {
    -stats.log_a
        - gamma_k * stats.log_b
        - n0 * log_power_law_norm(gamma_k, n1)
        - phi * gamma_k * stats.dist as f64
        - log_z_mallows(n1, phi * gamma_k)
}

/// Joint log-likelihood of `m` independent lists.
pub fn log_lik_joint(taus: &[Ranking], params: &PamaParams) -> Result<f64> {
    if taus.len() != params.gamma.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rankings but {} gamma values",
            taus.len(),
            params.gamma.len()
        )));
    }
    let mut total = 0.0;
    for (tau, &g) in taus.iter().zip(&params.gamma) {
        total += log_lik_single(tau, &params.ind, params.phi, g)?;
    }
    Ok(total)
}

/// Draw relative ranks from the Mallows model centered at the identity.
///
/// Entities are inserted in center order; the `j`-th insertion displaces the
/// new entity ahead of `v` already-placed ones with probability proportional
/// to `e^{-theta v}`. Element `r` of the result is the sampled rank of the
/// center's rank-`(r+1)` entity.
pub fn sample_mallows_ranks(n: usize, theta: f64, rng: &mut impl Rng) -> Vec<u32> {
    let mut order: Vec<u32> = Vec::with_capacity(n);
    for j in 0..n {
        let v = sample_displacement(j + 1, theta, rng);
        order.insert(j - v, j as u32);
    }
    let mut ranks = vec![0u32; n];
    for (pos, &item) in order.iter().enumerate() {
        ranks[item as usize] = pos as u32 + 1;
    }
    ranks
}

/// Sample `v` in `0..k` with probability proportional to `e^{-theta v}`.
fn sample_displacement(k: usize, theta: f64, rng: &mut impl Rng) -> usize {
    if k == 1 {
        return 0;
    }
    if theta <= 0.0 {
        return rng.gen_range(0..k);
    }
    let total = (-theta * k as f64).exp_m1() / (-theta).exp_m1();
    let target: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for v in 0..k {
        acc += (-theta * v as f64).exp();
        if acc > target {
            return v;
        }
    }
    k - 1
}

/// Draw a full list from the generative model: Mallows relative ranks for the
/// relevant entities, i.i.d. truncated power-law slots for the background
/// ones, and a uniformly chosen compatible background order.
pub fn sample_ranking(
    ind: &EnhancedIndicator,
    phi: f64,
    gamma_k: f64,
    rng: &mut impl Rng,
) -> Ranking {
    let n1 = ind.n1();
    let n0 = ind.n0();

    let mallows = sample_mallows_ranks(n1, phi * gamma_k, rng);
    let relevant = ind.relevant_entities();
    let mut tau1 = vec![0u32; n1];
    for (j, &e) in relevant.iter().enumerate() {
        tau1[j] = mallows[ind.label(e) as usize - 1];
    }

    // Slot weights t^{-gamma}, t = 1..=n1+1.
    let mut cum = Vec::with_capacity(n1 + 1);
    let mut acc = 0.0;
    for t in 1..=(n1 + 1) {
        acc += (-gamma_k * (t as f64).ln()).exp();
        cum.push(acc);
    }
    let total = acc;
    let tau01: Vec<u32> = (0..n0)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * total;
            (cum.partition_point(|&c| c <= u) + 1).min(n1 + 1) as u32
        })
        .collect();

    // Uniform compatible background order: descending slot, shuffled within
    // each slot group.
    let mut tau0 = vec![0u32; n0];
    let mut next_rank = 1u32;
    let mut group = Vec::new();
    for slot in (1..=(n1 + 1) as u32).rev() {
        group.clear();
        group.extend((0..n0).filter(|&j| tau01[j] == slot));
        for i in (1..group.len()).rev() {
            group.swap(i, rng.gen_range(0..=i));
        }
        for &j in &group {
            tau0[j] = next_rank;
            next_rank += 1;
        }
    }

    let d = Decomposition { tau1, tau01, tau0 };
    compose(&d, ind).expect("sampled decomposition is compatible")
}

/// Log of the logistic relevance prior given covariates:
/// `sum_i [ I_i * x_i' psi - log(1 + e^{x_i' psi}) ]`.
pub fn covariate_log_prior(ind: &EnhancedIndicator, cov: &CovariateModel) -> Result<f64> {
    if cov.x.len() != ind.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} covariate rows for {} entities",
            cov.x.len(),
            ind.n()
        )));
    }
    Ok(logistic_log_prior(ind, &cov.x, &cov.psi))
}

/// Unchecked core of [`covariate_log_prior`]; dimensions must already agree.
pub fn logistic_log_prior(ind: &EnhancedIndicator, x: &[Vec<f64>], psi: &[f64]) -> f64 {
    let mut total = 0.0;
    for (i, row) in x.iter().enumerate() {
        let z: f64 = row.iter().zip(psi).map(|(a, b)| a * b).sum();
        if ind.is_relevant(i) {
            total += z;
        }
        total -= ln_one_plus_exp(z);
    }
    total
}

/// Log density of the qualities under the exponential hyperprior.
pub fn pama_h_log_prior(gamma: &[f64], hp: &HyperPrior) -> f64 {
    gamma
        .iter()
        .map(|&g| hp.alpha.ln() - hp.alpha * g)
        .sum()
}

/// Exact probability of every ranking of `n` entities under the model.
/// Enumeration-based; intended for small `n` (tests, diagnostics).
pub fn exact_distribution(
    n: usize,
    ind: &EnhancedIndicator,
    phi: f64,
    gamma_k: f64,
) -> Vec<(Ranking, f64)> {
    crate::rank::all_rankings(n)
        .into_iter()
        .map(|tau| {
            let p = log_lik_single(&tau, ind, phi, gamma_k)
                .expect("matching universe")
                .exp();
            (tau, p)
        })
        .collect()
}
