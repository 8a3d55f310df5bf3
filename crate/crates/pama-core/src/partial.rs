//! Aggregation from partial ranking lists.
//!
//! Missing ranks are treated as missing data: each observed partial list is
//! completed to a full one, and inference alternates between refreshing the
//! completions (a Metropolis chain over the compatible set, proposing swaps
//! of two entities and rejecting any proposal that disturbs the observed
//! relative order) and the usual parameter updates on the imputed data. The
//! MLE counterpart averages the completed-data log-likelihood over several
//! completions per list and maximizes it by the same coordinate updates.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bayes::{
    self, ChainConfig, ChainRun, GibbsSampler, ModelKind, PSI_BOUND,
};
use crate::engine::StatsEngine;
use crate::error::{Error, Result};
use crate::mle::{GammaPartial, MleConfig, MleResult, PhiPartial};
use crate::model::{logistic_log_prior, PamaParams, SuffStats};
use crate::numeric::mean_sd;
use crate::rank::{is_compatible, PartialRanking, Ranking};
use crate::seeds;

/// Metropolis swap proposals per imputation refresh, as a multiple of `n`.
const REFRESH_STEPS_PER_ENTITY: usize = 2;

const HILL_CLIMB_PASSES: usize = 200;

/// The imputed full lists together with the current parameters.
#[derive(Clone, Debug)]
pub struct AugmentedState {
    pub fulls: Vec<Ranking>,
    pub params: PamaParams,
}

impl AugmentedState {
    /// Every imputed list must stay compatible with its observed partial.
    pub fn is_compatible_with(&self, partials: &[PartialRanking]) -> bool {
        self.fulls.len() == partials.len()
            && self
                .fulls
                .iter()
                .zip(partials)
                .all(|(f, p)| is_compatible(f, p))
    }
}

/// Moment estimator on the observed ranks alone: per-entity mean of the
/// ranks it actually received, with never-ranked entities placed at the
/// average rank `(n + 1) / 2`. On full lists this is exactly the full-data
/// moment estimator.
pub fn observed_moment_estimator(
    partials: &[PartialRanking],
    n1: usize,
) -> Result<crate::rank::EnhancedIndicator> {
    if partials.is_empty() {
        return Err(Error::EmptyInput("no ranking lists"));
    }
    let n = partials[0].len();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for partial in partials {
        for i in 0..n {
            if let Some(r) = partial.rank(i) {
                sums[i] += r as f64;
                counts[i] += 1;
            }
        }
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| {
            if c > 0 {
                s / c as f64
            } else {
                (n as f64 + 1.0) / 2.0
            }
        })
        .collect();
    crate::simulate::moment_from_mean_ranks(&means, n1)
}

/// A uniformly random full list compatible with the partial one: a uniform
/// permutation whose ranked subset is then reordered into the observed
/// relative order.
pub fn initial_completion(partial: &PartialRanking, rng: &mut ChaCha8Rng) -> Ranking {
    let n = partial.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let ranked = partial.ranked_in_order();
    if !ranked.is_empty() {
        let mut slots: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, e)| partial.rank(**e).is_some())
            .map(|(idx, _)| idx)
            .collect();
        slots.sort_unstable();
        for (slot, &e) in slots.iter().zip(&ranked) {
            order[*slot] = e;
        }
    }
    Ranking::from_order(&order).expect("shuffled order is a permutation")
}

/// Run `steps` Metropolis iterations over the compatible completions of
/// `partial`, targeting the model law of list `k` conditioned on the
/// observed relative order. Proposals swap two distinct entities and are
/// rejected outright when incompatible.
pub fn sample_compatible_full(
    current: &Ranking,
    partial: &PartialRanking,
    params: &PamaParams,
    k: usize,
    steps: usize,
    rng: &mut ChaCha8Rng,
) -> Ranking {
    let n = current.len();
    debug_assert!(is_compatible(current, partial));
    let gamma_k = params.gamma[k];
    let ind = &params.ind;
    let mut positions = current.positions().to_vec();
    let mut stats = SuffStats::compute(current, ind).expect("matching universe");
    for _ in 0..steps {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n - 1);
        let j = if j >= i { j + 1 } else { j };
        // Swapping two ranked entities always breaks the observed order;
        // skip the stats work.
        if partial.rank(i).is_some() && partial.rank(j).is_some() {
            continue;
        }
        positions.swap(i, j);
        let candidate = Ranking::from_positions(positions.clone()).expect("swap keeps permutation");
        if !is_compatible(&candidate, partial) {
            positions.swap(i, j);
            continue;
        }
        let cand_stats = SuffStats::compute(&candidate, ind).expect("matching universe");
        let delta = -(cand_stats.log_a - stats.log_a)
            - gamma_k * (cand_stats.log_b - stats.log_b)
            - params.phi * gamma_k * (cand_stats.dist as f64 - stats.dist as f64);
        if delta >= 0.0 || rng.gen::<f64>().ln() < delta {
            stats = cand_stats;
        } else {
            positions.swap(i, j);
        }
    }
    Ranking::from_positions(positions).expect("permutation preserved")
}

/// Data-augmentation chain over partial lists: each sweep refreshes the
/// non-full imputations, then runs one parameter sweep on the completed
/// data. With no missingness this reduces exactly to the full-list chain.
pub struct PartialChain<'a> {
    sampler: GibbsSampler<'a>,
    partials: &'a [PartialRanking],
    refresh_steps: usize,
    impute_rng: ChaCha8Rng,
    param_rng: ChaCha8Rng,
}

impl<'a> PartialChain<'a> {
    pub fn new(
        partials: &'a [PartialRanking],
        n1: usize,
        covariates: Option<&'a [Vec<f64>]>,
        cfg: &'a ChainConfig,
        kind: ModelKind,
    ) -> Result<Self> {
        if partials.is_empty() {
            return Err(Error::EmptyInput("no ranking lists"));
        }
        let n = partials[0].len();
        if partials.iter().any(|p| p.len() != n) {
            return Err(Error::EntityMismatch {
                left: n,
                right: partials.iter().map(|p| p.len()).find(|&l| l != n).unwrap(),
            });
        }
        let mut impute_rng = seeds::stream_rng(cfg.seed, "impute", 0);
        let fulls: Vec<Ranking> = partials
            .iter()
            .map(|p| {
                if p.is_full() {
                    p.to_full()
                } else {
                    Ok(initial_completion(p, &mut impute_rng))
                }
            })
            .collect::<Result<_>>()?;
        let init = observed_moment_estimator(partials, n1)?;
        let mut param_rng = seeds::stream_rng(cfg.seed, "params", 0);
        let sampler = GibbsSampler::with_init(
            &fulls,
            n1,
            covariates,
            cfg,
            kind,
            &mut param_rng,
            Some(&init),
        )?;
        Ok(Self {
            sampler,
            partials,
            refresh_steps: REFRESH_STEPS_PER_ENTITY * n,
            impute_rng,
            param_rng,
        })
    }

    /// Refresh every non-full imputation, then run one parameter sweep.
    pub fn sweep(&mut self) {
        let params = PamaParams {
            ind: self.sampler.indicator(),
            phi: self.sampler.phi,
            gamma: self.sampler.gamma.clone(),
        };
        for (k, partial) in self.partials.iter().enumerate() {
            if partial.is_full() {
                continue;
            }
            let current = self.sampler.list_ranking(k);
            let new = sample_compatible_full(
                &current,
                partial,
                &params,
                k,
                self.refresh_steps,
                &mut self.impute_rng,
            );
            self.sampler.replace_list(k, &new);
        }
        self.sampler.sweep(&mut self.param_rng);
    }

    pub fn snapshot(&self) -> bayes::ChainState {
        self.sampler.snapshot()
    }

    pub fn log_post(&self) -> f64 {
        self.sampler.log_post()
    }

    /// Current imputations and parameters.
    pub fn augmented(&self) -> AugmentedState {
        AugmentedState {
            fulls: (0..self.partials.len())
                .map(|k| self.sampler.list_ranking(k))
                .collect(),
            params: PamaParams {
                ind: self.sampler.indicator(),
                phi: self.sampler.phi,
                gamma: self.sampler.gamma.clone(),
            },
        }
    }

    pub(crate) fn acceptance(&self) -> bayes::AcceptanceRates {
        self.sampler.acceptance_rates()
    }
}

/// Run the data-augmentation chain and collect thinned post-burn-in states.
pub fn run_chain_partial(
    partials: &[PartialRanking],
    n1: usize,
    covariates: Option<&[Vec<f64>]>,
    cfg: &ChainConfig,
    kind: ModelKind,
) -> Result<ChainRun> {
    let mut chain = PartialChain::new(partials, n1, covariates, cfg, kind)?;
    let mut states = Vec::new();
    let mut sweep_log_post = Vec::with_capacity(cfg.iterations);
    for sweep in 0..cfg.iterations {
        chain.sweep();
        sweep_log_post.push(chain.log_post());
        if sweep >= cfg.burn_in && (sweep - cfg.burn_in) % cfg.thin == 0 {
            states.push(chain.snapshot());
        }
    }
    Ok(ChainRun {
        states,
        acceptance: chain.acceptance(),
        sweep_log_post,
    })
}

/// Monte Carlo EM over partial lists: the expectation step draws several
/// compatible completions per list, the maximization step runs the cyclic
/// coordinate updates on the averaged completed-data log-likelihood.
///
/// With full lists and one completion per list this is the plain fit,
/// trace for trace.
pub fn mcem_fit_partial(
    partials: &[PartialRanking],
    n1: usize,
    covariates: Option<&[Vec<f64>]>,
    cfg: &MleConfig,
    kind: ModelKind,
) -> Result<MleResult> {
    cfg.validate()?;
    if partials.is_empty() {
        return Err(Error::EmptyInput("no ranking lists"));
    }
    match kind {
        ModelKind::Pama | ModelKind::Covariate => {}
        ModelKind::PamaH => {
            return Err(Error::InvalidConfig(
                "hierarchical MLE over partial lists is not supported".into(),
            ))
        }
    }
    let covariate = matches!(kind, ModelKind::Covariate);
    if covariate && covariates.is_none() {
        return Err(Error::InvalidConfig(
            "covariate model requires a covariate matrix".into(),
        ));
    }

    let m = partials.len();
    let n = partials[0].len();
    let mut impute_rng = seeds::stream_rng(cfg.seed, "mcem-impute", 0);
    let mut fulls: Vec<Ranking> = partials
        .iter()
        .map(|p| {
            if p.is_full() {
                p.to_full()
            } else {
                Ok(initial_completion(p, &mut impute_rng))
            }
        })
        .collect::<Result<_>>()?;

    let mut rng = seeds::stream_rng(cfg.seed, "mle-init", 0);
    let mut ind = observed_moment_estimator(partials, n1)?;
    let mut phi: f64 = 1.0 - rng.gen::<f64>();
    let mut gamma: Vec<f64> = (0..m).map(|_| 1.0 - rng.gen::<f64>()).collect();
    let p = covariates.map_or(0, |x| x.first().map_or(0, |r| r.len()));
    let mut psi = vec![0.0; p];
    let mut sample_count = if partials.iter().all(|p| p.is_full()) {
        1
    } else {
        cfg.mcem_samples
    };
    let refresh_steps = REFRESH_STEPS_PER_ENTITY * n;

    let objective = |engine: &StatsEngine, gamma: &[f64], phi: f64, psi: &[f64]| -> f64 {
        let mut obj = engine.weighted_log_lik(gamma, phi);
        if covariate {
            obj += logistic_log_prior(&engine.indicator(), covariates.unwrap(), psi);
        }
        obj
    };

    let mut prev = {
        let engine = StatsEngine::new(&fulls, &ind);
        objective(&engine, &gamma, phi, &psi)
    };
    let mut trace = Vec::new();
    let mut trace_se = Vec::new();
    let mut converged = false;
    let mut cycles_used = cfg.max_cycles;
    for cycle in 1..=cfg.max_cycles {
        // E-step: draw completions per list under the current parameters.
        let params = PamaParams {
            ind: ind.clone(),
            phi,
            gamma: gamma.clone(),
        };
        let mut weighted: Vec<(Vec<u32>, f64, usize)> = Vec::with_capacity(m * sample_count);
        let weight = 1.0 / sample_count as f64;
        for (k, partial) in partials.iter().enumerate() {
            if partial.is_full() {
                for _ in 0..sample_count {
                    weighted.push((fulls[k].positions().to_vec(), weight, k));
                }
                continue;
            }
            let mut current = fulls[k].clone();
            for _ in 0..sample_count {
                current = sample_compatible_full(
                    &current,
                    partial,
                    &params,
                    k,
                    refresh_steps,
                    &mut impute_rng,
                );
                weighted.push((current.positions().to_vec(), weight, k));
            }
            fulls[k] = current;
        }
        let mut engine = StatsEngine::with_weights(weighted, &ind);

        // M-step: coordinate updates on the averaged statistics.
        let n0 = (engine.n - engine.n1) as f64;
        for k in 0..m {
            let sums = engine.group_sums(m);
            let partial_obj = GammaPartial {
                n1: engine.n1,
                n0,
                weight: sums[k].weight,
                sum_log_b: sums[k].log_b,
                sum_dist: sums[k].dist,
                phi,
            };
            for _ in 0..cfg.newton_iters {
                gamma[k] = partial_obj.step(gamma[k], cfg.alpha_gamma);
            }
        }
        {
            let sums = engine.group_sums(m);
            let partial_obj = PhiPartial {
                n1: engine.n1,
                groups: gamma
                    .iter()
                    .zip(&sums)
                    .map(|(&g, s)| (g, s.weight, s.dist))
                    .collect(),
            };
            for _ in 0..cfg.newton_iters {
                phi = partial_obj.step(phi, cfg.alpha_phi);
            }
        }
        let cov_adj = covariate.then(|| (covariates.unwrap(), psi.as_slice()));
        engine.hill_climb(&gamma, phi, cov_adj, HILL_CLIMB_PASSES);
        ind = engine.indicator();
        if covariate {
            psi = crate::mle::logistic_mle_boxed(&ind, covariates.unwrap(), &psi, 25, PSI_BOUND);
        }

        // Objective estimate and its Monte Carlo error over completions.
        let q = objective(&engine, &gamma, phi, &psi);
        let per_sample: Vec<f64> = (0..sample_count)
            .map(|s| {
                let sub: Vec<(Vec<u32>, f64, usize)> = (0..m)
                    .map(|k| {
                        (
                            engine.list_positions(k * sample_count + s).to_vec(),
                            1.0,
                            k,
                        )
                    })
                    .collect();
                let sub_engine = StatsEngine::with_weights(sub, &ind);
                sub_engine.weighted_log_lik(&gamma, phi)
            })
            .collect();
        let (_, sd_q) = mean_sd(&per_sample);
        let se = if sample_count > 1 {
            sd_q / (sample_count as f64).sqrt()
        } else {
            0.0
        };
        trace.push(q);
        trace_se.push(se);

        // With noise-free completions (all lists full) the plain gain rule
        // applies, matching the full-data fit cycle for cycle. Otherwise a
        // single-cycle gain is masked by Monte Carlo noise: judge
        // convergence on the average gain over the last three cycles, and
        // grow the sample (capped) when the raw gain falls inside the noise
        // band.
        let gain = q - prev;
        let converged_now = if se == 0.0 {
            gain < cfg.tol
        } else if trace.len() >= 3 {
            let avg = (q - trace[trace.len() - 3]) / 2.0;
            avg < cfg.tol
        } else {
            false
        };
        if converged_now {
            converged = true;
            cycles_used = cycle;
            break;
        }
        if gain < 3.0 * se && sample_count < cfg.mcem_samples.saturating_mul(16) {
            sample_count += sample_count / 2;
        }
        prev = q;
    }

    let log_lik = *trace.last().expect("at least one cycle runs");
    let phi_identified = gamma.iter().any(|&g| g > 1e-6);
    Ok(MleResult {
        params: PamaParams { ind, phi, gamma },
        psi: covariate.then_some(psi),
        alpha: None,
        log_lik,
        converged,
        cycles_used,
        trace,
        trace_se: Some(trace_se),
        phi_identified,
    })
}
