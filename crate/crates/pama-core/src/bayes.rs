//! Metropolis-within-Gibbs posterior sampling.
//!
//! The indicator, the common factor `phi`, and each ranker quality `gamma_k`
//! are updated in turn within a sweep; the covariate coefficients `psi` or
//! the hierarchical rate `alpha` follow when those model variants are
//! enabled. Priors are uniform: `phi, gamma_k ~ U[0, b]` and the indicator
//! uniform over its permutation space. The hierarchical variant replaces the
//! uniform quality prior with `gamma_k ~ Exp(alpha)` and puts a Gamma(1, 1)
//! prior on `alpha`; the covariate variant multiplies in a logistic relevance
//! prior with flat coefficients on a wide box.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::engine::StatsEngine;
use crate::error::{Error, Result};
use crate::model::{log_power_law_norm, log_z_mallows, logistic_log_prior, PamaParams};
use crate::rank::{EnhancedIndicator, Ranking};
use crate::seeds;
use crate::simulate::moment_estimator;

/// Flat box for the covariate coefficients, keeping their conditional proper.
pub const PSI_BOUND: f64 = 20.0;

/// Gamma(shape, rate) prior on the hierarchical rate `alpha`.
const ALPHA_PRIOR_SHAPE: f64 = 1.0;
const ALPHA_PRIOR_RATE: f64 = 1.0;

/// Which model variant a chain or optimizer targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Pama,
    PamaH,
    Covariate,
}

/// Chain length, prior bound, proposal scales, and the master seed.
#[derive(Clone, Debug)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Upper bound of the uniform priors on `phi` and `gamma_k`.
    pub b: f64,
    pub sigma_phi: f64,
    pub sigma_gamma: f64,
    pub sigma_psi: f64,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            burn_in: 5_000,
            thin: 5,
            b: 10.0,
            sigma_phi: 0.1,
            sigma_gamma: 0.1,
            sigma_psi: 0.2,
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(
                "burn_in must be smaller than iterations".into(),
            ));
        }
        if self.thin == 0 {
            return Err(Error::InvalidConfig("thin must be >= 1".into()));
        }
        if !(self.b > 0.0) {
            return Err(Error::InvalidConfig("b must be > 0".into()));
        }
        if !(self.sigma_phi > 0.0 && self.sigma_gamma > 0.0 && self.sigma_psi > 0.0) {
            return Err(Error::InvalidConfig(
                "proposal standard deviations must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded state of the chain.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub params: PamaParams,
    pub psi: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub log_post: f64,
}

/// Per-block Metropolis acceptance rates.
#[derive(Clone, Copy, Debug, Default)]
pub struct AcceptanceRates {
    pub indicator: f64,
    pub phi: f64,
    pub gamma: f64,
    pub psi: Option<f64>,
}

/// Output of a chain: thinned post-burn-in states plus diagnostics.
#[derive(Clone, Debug)]
pub struct ChainRun {
    pub states: Vec<ChainState>,
    pub acceptance: AcceptanceRates,
    /// Unnormalized log-posterior after every sweep (including burn-in).
    pub sweep_log_post: Vec<f64>,
}

/// Posterior means and summaries over the recorded states.
#[derive(Clone, Debug)]
pub struct PosteriorSummary {
    /// Per-entity mean label, with background states counted at the average
    /// background rank `(n1 + 1 + n) / 2`.
    pub i_bar: Vec<f64>,
    pub phi_bar: f64,
    pub gamma_bar: Vec<f64>,
    pub alpha_bar: Option<f64>,
    pub psi_bar: Option<Vec<f64>>,
    /// Per-coefficient posterior probability of being positive.
    pub psi_pos_prob: Option<Vec<f64>>,
    pub acceptance: AcceptanceRates,
}

#[derive(Default)]
struct BlockCounter {
    proposals: u64,
    accepts: u64,
}

impl BlockCounter {
    fn rate(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            self.accepts as f64 / self.proposals as f64
        }
    }
}

/// The Metropolis-within-Gibbs sampler. Exposes one update method per block
/// so individual conditionals can be exercised directly.
pub struct GibbsSampler<'a> {
    engine: StatsEngine,
    kind: ModelKind,
    covariates: Option<&'a [Vec<f64>]>,
    cfg: &'a ChainConfig,
    m: usize,
    pub phi: f64,
    pub gamma: Vec<f64>,
    pub psi: Vec<f64>,
    pub alpha: f64,
    acc_ind: BlockCounter,
    acc_phi: BlockCounter,
    acc_gamma: BlockCounter,
    acc_psi: BlockCounter,
}

impl<'a> GibbsSampler<'a> {
    /// Build a sampler with the moment-estimator indicator and qualities
    /// drawn uniformly from (0, 1].
    pub fn new(
        rankings: &[Ranking],
        n1: usize,
        covariates: Option<&'a [Vec<f64>]>,
        cfg: &'a ChainConfig,
        kind: ModelKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Self::with_init(rankings, n1, covariates, cfg, kind, rng, None)
    }

    /// As [`GibbsSampler::new`], but with an explicit starting indicator
    /// (partial-list chains start from the observed-rank moment estimate
    /// rather than one computed on arbitrary completions).
    pub fn with_init(
        rankings: &[Ranking],
        n1: usize,
        covariates: Option<&'a [Vec<f64>]>,
        cfg: &'a ChainConfig,
        kind: ModelKind,
        rng: &mut ChaCha8Rng,
        init: Option<&EnhancedIndicator>,
    ) -> Result<Self> {
        cfg.validate()?;
        if rankings.is_empty() {
            return Err(Error::EmptyInput("no ranking lists"));
        }
        let n = rankings[0].len();
        if rankings.iter().any(|r| r.len() != n) {
            return Err(Error::EntityMismatch {
                left: n,
                right: rankings.iter().map(|r| r.len()).find(|&l| l != n).unwrap(),
            });
        }
        if n1 < 1 || n1 > n {
            return Err(Error::InvalidConfig("n1 must lie in 1..=n".into()));
        }
        match (kind, covariates) {
            (ModelKind::Covariate, None) => {
                return Err(Error::InvalidConfig(
                    "covariate model requires a covariate matrix".into(),
                ))
            }
            (ModelKind::Covariate, Some(x)) if x.len() != n => {
                return Err(Error::DimensionMismatch(format!(
                    "{} covariate rows for {} entities",
                    x.len(),
                    n
                )))
            }
            _ => {}
        }

        let m = rankings.len();
        let ind = match init {
            Some(ind) if ind.n() == n && ind.n1() == n1 => ind.clone(),
            Some(_) => {
                return Err(Error::InvalidConfig(
                    "initial indicator does not match the data shape".into(),
                ))
            }
            None => moment_estimator(rankings, n1)?,
        };
        let engine = StatsEngine::new(rankings, &ind);
        let phi = 1.0 - rng.gen::<f64>();
        let gamma = (0..m).map(|_| 1.0 - rng.gen::<f64>()).collect();
        let p = covariates.map_or(0, |x| x.first().map_or(0, |row| row.len()));
        Ok(Self {
            engine,
            kind,
            covariates,
            cfg,
            m,
            phi,
            gamma,
            psi: vec![0.0; p],
            alpha: 1.0,
            acc_ind: BlockCounter::default(),
            acc_phi: BlockCounter::default(),
            acc_gamma: BlockCounter::default(),
            acc_psi: BlockCounter::default(),
        })
    }

    pub fn indicator(&self) -> EnhancedIndicator {
        self.engine.indicator()
    }

    pub fn n(&self) -> usize {
        self.engine.n
    }

    fn n0(&self) -> f64 {
        (self.engine.n - self.engine.n1) as f64
    }

    /// One random proposal from the indicator move set: an adjacent label
    /// swap, or the exchange of the rank-`n1` entity with a background one.
    pub fn update_indicator(&mut self, rng: &mut ChaCha8Rng) {
        let n1 = self.engine.n1;
        let n0 = self.engine.bg_entities.len();
        let moves = n1.saturating_sub(1) + n0;
        if moves == 0 {
            return;
        }
        self.acc_ind.proposals += 1;
        let mv = rng.gen_range(0..moves);
        if mv < n1 - 1 {
            let delta = self.engine.adjacent_delta(mv, &self.gamma, self.phi);
            if accept(delta, rng) {
                self.engine.apply_adjacent(mv);
                self.acc_ind.accepts += 1;
            }
        } else {
            let a = self.engine.rel_by_rank[n1 - 1];
            let b = self.engine.bg_entities[mv - (n1 - 1)];
            let mut delta = self.engine.exchange_delta(a, b, &self.gamma, self.phi);
            if let (ModelKind::Covariate, Some(x)) = (self.kind, self.covariates) {
                let dot =
                    |e: usize| -> f64 { x[e].iter().zip(&self.psi).map(|(v, p)| v * p).sum() };
                delta += dot(b) - dot(a);
            }
            if accept(delta, rng) {
                self.engine.apply_exchange(a, b);
                self.acc_ind.accepts += 1;
            }
        }
    }

    /// Gaussian random-walk update of `phi` against its conditional.
    pub fn update_phi(&mut self, rng: &mut ChaCha8Rng) {
        self.acc_phi.proposals += 1;
        let step: f64 = StandardNormal.sample(rng);
        let proposal = self.phi + self.cfg.sigma_phi * step;
        if !(0.0..=self.cfg.b).contains(&proposal) {
            return;
        }
        let n1 = self.engine.n1;
        let sums = self.engine.group_sums(self.m);
        let mut delta = 0.0;
        for (g, s) in self.gamma.iter().zip(&sums) {
            delta -= (proposal - self.phi) * g * s.dist;
            delta -=
                s.weight * (log_z_mallows(n1, proposal * g) - log_z_mallows(n1, self.phi * g));
        }
        if accept(delta, rng) {
            self.phi = proposal;
            self.acc_phi.accepts += 1;
        }
    }

    /// Gaussian random-walk update of `gamma_k` against its conditional,
    /// which depends only on list `k`.
    pub fn update_gamma(&mut self, k: usize, rng: &mut ChaCha8Rng) {
        self.acc_gamma.proposals += 1;
        let step: f64 = StandardNormal.sample(rng);
        let proposal = self.gamma[k] + self.cfg.sigma_gamma * step;
        let in_support = match self.kind {
            // Exponential prior: any nonnegative quality.
            ModelKind::PamaH => proposal >= 0.0,
            _ => (0.0..=self.cfg.b).contains(&proposal),
        };
        if !in_support {
            return;
        }
        let current = self.gamma[k];
        let n1 = self.engine.n1;
        let sums = self.engine.group_sums(self.m);
        let s = &sums[k];
        let mut delta = -(proposal - current) * (s.log_b + self.phi * s.dist)
            - s.weight
                * (self.n0()
                    * (log_power_law_norm(proposal, n1) - log_power_law_norm(current, n1))
                    + log_z_mallows(n1, self.phi * proposal)
                    - log_z_mallows(n1, self.phi * current));
        if self.kind == ModelKind::PamaH {
            delta -= self.alpha * (proposal - current);
        }
        if accept(delta, rng) {
            self.gamma[k] = proposal;
            self.acc_gamma.accepts += 1;
        }
    }

    /// Random-walk update of one covariate coefficient under the flat boxed
    /// prior; leaves the other blocks untouched.
    pub fn update_psi(&mut self, l: usize, rng: &mut ChaCha8Rng) {
        let x = match self.covariates {
            Some(x) => x,
            None => return,
        };
        self.acc_psi.proposals += 1;
        let step: f64 = StandardNormal.sample(rng);
        let proposal = self.psi[l] + self.cfg.sigma_psi * step;
        if proposal.abs() > PSI_BOUND {
            return;
        }
        let ind = self.engine.indicator();
        let current_lp = logistic_log_prior(&ind, x, &self.psi);
        let old = self.psi[l];
        self.psi[l] = proposal;
        let new_lp = logistic_log_prior(&ind, x, &self.psi);
        self.psi[l] = old;
        if accept(new_lp - current_lp, rng) {
            self.psi[l] = proposal;
            self.acc_psi.accepts += 1;
        }
    }

    /// Conjugate draw of the hierarchical rate:
    /// `alpha | gamma ~ Gamma(shape + m, rate + sum gamma)`.
    pub fn update_alpha(&mut self, rng: &mut ChaCha8Rng) {
        let shape = ALPHA_PRIOR_SHAPE + self.m as f64;
        let rate = ALPHA_PRIOR_RATE + self.gamma.iter().sum::<f64>();
        let dist = Gamma::new(shape, 1.0 / rate).expect("valid gamma parameters");
        self.alpha = dist.sample(rng);
    }

    /// Unnormalized log-posterior of the current state.
    pub fn log_post(&self) -> f64 {
        let mut lp = self.engine.weighted_log_lik(&self.gamma, self.phi);
        match self.kind {
            ModelKind::Pama => {}
            ModelKind::PamaH => {
                lp += self
                    .gamma
                    .iter()
                    .map(|&g| self.alpha.ln() - self.alpha * g)
                    .sum::<f64>();
                lp += (ALPHA_PRIOR_SHAPE - 1.0) * self.alpha.ln() - ALPHA_PRIOR_RATE * self.alpha;
            }
            ModelKind::Covariate => {
                let ind = self.engine.indicator();
                lp += logistic_log_prior(&ind, self.covariates.unwrap(), &self.psi);
            }
        }
        lp
    }

    pub fn snapshot(&self) -> ChainState {
        ChainState {
            params: PamaParams {
                ind: self.engine.indicator(),
                phi: self.phi,
                gamma: self.gamma.clone(),
            },
            psi: matches!(self.kind, ModelKind::Covariate).then(|| self.psi.clone()),
            alpha: matches!(self.kind, ModelKind::PamaH).then_some(self.alpha),
            log_post: self.log_post(),
        }
    }

    pub(crate) fn acceptance_rates(&self) -> AcceptanceRates {
        AcceptanceRates {
            indicator: self.acc_ind.rate(),
            phi: self.acc_phi.rate(),
            gamma: self.acc_gamma.rate(),
            psi: (self.acc_psi.proposals > 0).then(|| self.acc_psi.rate()),
        }
    }

    /// One systematic-scan sweep: `n` indicator proposals, `phi`, every
    /// `gamma_k`, then `psi` or `alpha` when enabled.
    pub fn sweep(&mut self, rng: &mut ChaCha8Rng) {
        for _ in 0..self.engine.n {
            self.update_indicator(rng);
        }
        self.update_phi(rng);
        for k in 0..self.m {
            self.update_gamma(k, rng);
        }
        match self.kind {
            ModelKind::Covariate => {
                for l in 0..self.psi.len() {
                    self.update_psi(l, rng);
                }
            }
            ModelKind::PamaH => self.update_alpha(rng),
            ModelKind::Pama => {}
        }
    }

    /// Swap in a new ranking for list `k` (partial-list imputation).
    pub(crate) fn replace_list(&mut self, k: usize, ranking: &Ranking) {
        self.engine.replace_list(k, ranking);
    }

    /// Current ranking of list `k`.
    pub(crate) fn list_ranking(&self, k: usize) -> Ranking {
        Ranking::from_positions(self.engine.list_positions(k).to_vec())
            .expect("engine holds valid rankings")
    }
}

fn accept(log_ratio: f64, rng: &mut ChaCha8Rng) -> bool {
    log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
}

/// Run a full chain and collect thinned post-burn-in states.
pub fn run_chain(
    rankings: &[Ranking],
    n1: usize,
    covariates: Option<&[Vec<f64>]>,
    cfg: &ChainConfig,
    kind: ModelKind,
) -> Result<ChainRun> {
    let mut rng = seeds::stream_rng(cfg.seed, "params", 0);
    let mut sampler = GibbsSampler::new(rankings, n1, covariates, cfg, kind, &mut rng)?;
    let mut states = Vec::new();
    let mut sweep_log_post = Vec::with_capacity(cfg.iterations);
    for sweep in 0..cfg.iterations {
        sampler.sweep(&mut rng);
        sweep_log_post.push(sampler.log_post());
        if sweep >= cfg.burn_in && (sweep - cfg.burn_in) % cfg.thin == 0 {
            states.push(sampler.snapshot());
        }
    }
    Ok(ChainRun {
        states,
        acceptance: sampler.acceptance_rates(),
        sweep_log_post,
    })
}

/// Posterior means over the recorded states.
pub fn posterior_summary(run: &ChainRun) -> Result<PosteriorSummary> {
    let states = &run.states;
    let first = states.first().ok_or(Error::EmptyInput("no chain states"))?;
    let n = first.params.ind.n();
    let n1 = first.params.ind.n1();
    let m = first.params.gamma.len();
    let count = states.len() as f64;
    let background_rank = (n1 + 1 + n) as f64 / 2.0;

    let mut i_bar = vec![0.0; n];
    let mut phi_bar = 0.0;
    let mut gamma_bar = vec![0.0; m];
    let mut alpha_bar = 0.0;
    let p = first.psi.as_ref().map_or(0, |v| v.len());
    let mut psi_bar = vec![0.0; p];
    let mut psi_pos = vec![0.0; p];
    for s in states {
        for i in 0..n {
            let label = s.params.ind.label(i);
            i_bar[i] += if label > 0 {
                label as f64
            } else {
                background_rank
            };
        }
        phi_bar += s.params.phi;
        for (acc, g) in gamma_bar.iter_mut().zip(&s.params.gamma) {
            *acc += g;
        }
        if let Some(a) = s.alpha {
            alpha_bar += a;
        }
        if let Some(psi) = &s.psi {
            for l in 0..p {
                psi_bar[l] += psi[l];
                if psi[l] > 0.0 {
                    psi_pos[l] += 1.0;
                }
            }
        }
    }
    i_bar.iter_mut().for_each(|v| *v /= count);
    phi_bar /= count;
    gamma_bar.iter_mut().for_each(|v| *v /= count);
    psi_bar.iter_mut().for_each(|v| *v /= count);
    psi_pos.iter_mut().for_each(|v| *v /= count);

    Ok(PosteriorSummary {
        i_bar,
        phi_bar,
        gamma_bar,
        alpha_bar: first.alpha.map(|_| alpha_bar / count),
        psi_bar: first.psi.as_ref().map(|_| psi_bar),
        psi_pos_prob: first.psi.as_ref().map(|_| psi_pos),
        acceptance: run.acceptance,
    })
}

/// Final aggregated ranking: entities sorted by ascending mean label, ties
/// broken by entity index.
pub fn aggregate(summary: &PosteriorSummary) -> Ranking {
    let mut order: Vec<usize> = (0..summary.i_bar.len()).collect();
    order.sort_by(|&a, &b| summary.i_bar[a].total_cmp(&summary.i_bar[b]).then(a.cmp(&b)));
    Ranking::from_order(&order).expect("sorted entity order is a permutation")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sample_ranking;
    use crate::rank::all_indicators;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn small_data(seed: u64, n: usize, n1: usize, m: usize, phi: f64, g: f64) -> Vec<Ranking> {
        let ind = EnhancedIndicator::leading(n, n1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| sample_ranking(&ind, phi, g, &mut rng))
            .collect()
    }

    #[test]
    fn config_validation() {
        let mut cfg = ChainConfig::default();
        cfg.burn_in = cfg.iterations;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = ChainConfig {
            iterations: 10,
            burn_in: 5,
            ..ChainConfig::default()
        };
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn fixed_seed_reproduces_chain_exactly() {
        let data = small_data(4, 6, 2, 3, 0.6, 1.5);
        let cfg = ChainConfig {
            iterations: 80,
            burn_in: 40,
            thin: 2,
            seed: 99,
            ..ChainConfig::default()
        };
        let a = run_chain(&data, 2, None, &cfg, ModelKind::Pama).unwrap();
        let b = run_chain(&data, 2, None, &cfg, ModelKind::Pama).unwrap();
        assert_eq!(a.states.len(), b.states.len());
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x.params.ind, y.params.ind);
            assert_eq!(x.params.phi, y.params.phi);
            assert_eq!(x.params.gamma, y.params.gamma);
            assert_eq!(x.log_post, y.log_post);
        }
        assert_eq!(a.sweep_log_post, b.sweep_log_post);
    }

    #[test]
    fn recorded_log_post_is_recomputable() {
        let data = small_data(7, 6, 2, 3, 0.6, 1.2);
        let cfg = ChainConfig {
            iterations: 120,
            burn_in: 20,
            thin: 10,
            seed: 1,
            ..ChainConfig::default()
        };
        for kind in [ModelKind::Pama, ModelKind::PamaH] {
            let run = run_chain(&data, 2, None, &cfg, kind).unwrap();
            for s in &run.states {
                let mut lp = crate::model::log_lik_joint(&data, &s.params).unwrap();
                if let Some(alpha) = s.alpha {
                    lp += s
                        .params
                        .gamma
                        .iter()
                        .map(|&g| alpha.ln() - alpha * g)
                        .sum::<f64>();
                    lp += -alpha; // Gamma(1, 1) prior on alpha
                }
                assert_relative_eq!(lp, s.log_post, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn proposals_outside_support_are_rejected() {
        let data = small_data(3, 5, 2, 2, 0.5, 1.0);
        let cfg = ChainConfig {
            iterations: 2,
            burn_in: 1,
            sigma_phi: 0.3,
            seed: 5,
            ..ChainConfig::default()
        };
        let mut rng = seeds::stream_rng(5, "params", 0);
        let mut sampler =
            GibbsSampler::new(&data, 2, None, &cfg, ModelKind::Pama, &mut rng).unwrap();
        sampler.phi = cfg.b - 1e-12;
        // With phi pinned at the bound, out-of-box proposals must leave the
        // state untouched.
        for _ in 0..200 {
            sampler.update_phi(&mut rng);
            assert!((0.0..=cfg.b).contains(&sampler.phi));
        }
        // A proposal equal to the current state has acceptance ratio 1.
        assert!(accept(0.0, &mut rng));
    }

    #[test]
    fn prior_only_marginals_are_uniform() {
        // A single-entity universe makes every likelihood factor constant,
        // so the chain must reproduce the U[0, b] priors on phi and gamma.
        let data = vec![Ranking::from_positions(vec![1]).unwrap(); 2];
        let cfg = ChainConfig {
            iterations: 60_000,
            burn_in: 5_000,
            thin: 5,
            sigma_phi: 2.0,
            sigma_gamma: 2.0,
            seed: 21,
            ..ChainConfig::default()
        };
        let run = run_chain(&data, 1, None, &cfg, ModelKind::Pama).unwrap();
        let phis: Vec<f64> = run.states.iter().map(|s| s.params.phi).collect();
        let gammas: Vec<f64> = run.states.iter().map(|s| s.params.gamma[0]).collect();
        for xs in [phis, gammas] {
            let d = ks_statistic_uniform(&xs, cfg.b);
            let p = ks_p_value(d, xs.len());
            assert!(p > 0.01, "KS p-value {p} too small (D = {d})");
        }
    }

    fn ks_statistic_uniform(xs: &[f64], b: f64) -> f64 {
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let cdf = x / b;
                let lo = i as f64 / n;
                let hi = (i + 1) as f64 / n;
                (cdf - lo).abs().max((hi - cdf).abs())
            })
            .fold(0.0, f64::max)
    }

    fn ks_p_value(d: f64, n: usize) -> f64 {
        // Asymptotic Kolmogorov distribution; the thinned draws are still
        // autocorrelated, so this is a coarse sanity check only.
        let lambda = d * (n as f64).sqrt();
        let mut p = 0.0;
        for j in 1..100 {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            p += 2.0 * sign * (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn chain_without_background_keeps_indicator_size() {
        let data = small_data(11, 4, 4, 2, 0.8, 1.0);
        let cfg = ChainConfig {
            iterations: 30,
            burn_in: 10,
            thin: 1,
            seed: 2,
            ..ChainConfig::default()
        };
        let run = run_chain(&data, 4, None, &cfg, ModelKind::Pama).unwrap();
        for s in &run.states {
            assert_eq!(s.params.ind.n1(), 4);
        }
    }

    #[test]
    fn indicator_kernel_preserves_exact_conditional() {
        // Stationarity check on n = 4: the single-move transition matrix
        // over all indicator states leaves the exact conditional invariant.
        let n = 4;
        let n1 = 2;
        let data = small_data(17, n, n1, 2, 0.7, 1.4);
        let phi = 0.9;
        let gamma = [1.1, 0.6];
        let states = all_indicators(n, n1);
        let idx_of = |ind: &EnhancedIndicator| states.iter().position(|s| s == ind).unwrap();

        // Unnormalized conditional f(ind | phi, gamma) over the state space.
        let dens: Vec<f64> = states
            .iter()
            .map(|ind| {
                data.iter()
                    .zip(&gamma)
                    .map(|(tau, &g)| {
                        let st = crate::model::SuffStats::compute(tau, ind).unwrap();
                        -st.log_a - g * st.log_b - phi * g * st.dist as f64
                    })
                    .sum::<f64>()
            })
            .collect();
        let max = dens.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let weights: Vec<f64> = dens.iter().map(|d| (d - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let pi: Vec<f64> = weights.iter().map(|w| w / total).collect();

        // Transition matrix of one indicator proposal (uniform over the
        // constant-size move set, Metropolis acceptance).
        let moves = n1 - 1 + (n - n1);
        let mut trans = vec![vec![0.0; states.len()]; states.len()];
        for (si, ind) in states.iter().enumerate() {
            let rel = ind.relevant_by_rank();
            let mut stay = 1.0;
            let mut neighbors = Vec::new();
            for r in 0..n1 - 1 {
                let mut labels = ind.labels().to_vec();
                labels.swap(rel[r], rel[r + 1]);
                neighbors.push(EnhancedIndicator::from_labels(labels).unwrap());
            }
            for b in ind.background_entities() {
                let mut labels = ind.labels().to_vec();
                labels[b] = n1 as u32;
                labels[rel[n1 - 1]] = 0;
                neighbors.push(EnhancedIndicator::from_labels(labels).unwrap());
            }
            assert_eq!(neighbors.len(), moves);
            for nb in neighbors {
                let sj = idx_of(&nb);
                let a = (pi[sj] / pi[si]).min(1.0) / moves as f64;
                trans[si][sj] += a;
                stay -= a;
            }
            trans[si][si] += stay;
        }

        // Stationarity: pi * P = pi.
        for j in 0..states.len() {
            let flow: f64 = (0..states.len()).map(|i| pi[i] * trans[i][j]).sum();
            assert_relative_eq!(flow, pi[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn alpha_draw_matches_conjugate_moments() {
        let data = small_data(23, 5, 2, 2, 0.5, 1.0);
        let cfg = ChainConfig {
            iterations: 4,
            burn_in: 2,
            seed: 3,
            ..ChainConfig::default()
        };
        let mut rng = seeds::stream_rng(3, "params", 0);
        let mut sampler =
            GibbsSampler::new(&data, 2, None, &cfg, ModelKind::PamaH, &mut rng).unwrap();
        sampler.gamma = vec![1.0, 1.0];
        // Gamma(1 + 2, 1 + 2): mean 1.
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                sampler.update_alpha(&mut rng);
                sampler.alpha
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert_relative_eq!(mean, 1.0, max_relative = 0.01);
    }

    #[test]
    fn psi_update_with_zero_covariates_always_accepts() {
        let data = small_data(29, 4, 2, 2, 0.5, 1.0);
        let x = vec![vec![0.0]; 4];
        let cfg = ChainConfig {
            iterations: 4,
            burn_in: 2,
            seed: 8,
            ..ChainConfig::default()
        };
        let mut rng = seeds::stream_rng(8, "params", 0);
        let mut sampler =
            GibbsSampler::new(&data, 2, Some(&x), &cfg, ModelKind::Covariate, &mut rng).unwrap();
        let gamma_before = sampler.gamma.clone();
        let ind_before = sampler.indicator();
        for _ in 0..50 {
            let before = sampler.psi[0];
            sampler.update_psi(0, &mut rng);
            // Flat conditional: every in-box proposal is accepted.
            assert_ne!(sampler.psi[0], before);
        }
        // The psi block leaves the other blocks untouched.
        assert_eq!(sampler.gamma, gamma_before);
        assert_eq!(sampler.indicator(), ind_before);
    }

    #[test]
    fn summary_formulas_and_aggregation() {
        let mk = |labels: Vec<u32>| ChainState {
            params: PamaParams {
                ind: EnhancedIndicator::from_labels(labels).unwrap(),
                phi: 0.5,
                gamma: vec![1.0],
            },
            psi: None,
            alpha: None,
            log_post: 0.0,
        };
        // n = 10, n1 = 3; background placeholder is (3 + 1 + 10) / 2 = 7.
        let run = ChainRun {
            states: vec![
                mk(vec![1, 2, 3, 0, 0, 0, 0, 0, 0, 0]),
                mk(vec![0, 2, 3, 1, 0, 0, 0, 0, 0, 0]),
            ],
            acceptance: AcceptanceRates::default(),
            sweep_log_post: vec![],
        };
        let s = posterior_summary(&run).unwrap();
        assert_relative_eq!(s.i_bar[0], (1.0 + 7.0) / 2.0);
        assert_relative_eq!(s.i_bar[1], 2.0);
        assert_relative_eq!(s.i_bar[4], 7.0);

        let agg = aggregate(&s);
        // The 50/50 entity (mean 4) ranks ahead of always-background ones.
        assert!(agg.position(0) < agg.position(4));
    }

    #[test]
    fn aggregate_breaks_ties_by_index() {
        let s = PosteriorSummary {
            i_bar: vec![3.0, 3.0, 1.0],
            phi_bar: 0.0,
            gamma_bar: vec![],
            alpha_bar: None,
            psi_bar: None,
            psi_pos_prob: None,
            acceptance: AcceptanceRates::default(),
        };
        assert_eq!(aggregate(&s).order(), vec![2, 0, 1]);
    }

    #[test]
    fn empty_summary_is_an_error() {
        let run = ChainRun {
            states: vec![],
            acceptance: AcceptanceRates::default(),
            sweep_log_post: vec![],
        };
        assert!(matches!(posterior_summary(&run), Err(Error::EmptyInput(_))));
    }
}
