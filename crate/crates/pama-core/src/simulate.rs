//! Scenario generators, evaluation metrics, the moment estimator, and the
//! seeded replicate benchmark harness.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{self, ChainConfig, ModelKind};
use crate::error::{Error, Result};
use crate::mle::{self, MleConfig};
use crate::model::sample_ranking;
use crate::numeric::mean_sd;
use crate::rank::{EnhancedIndicator, Ranking, TiedRanking};
use crate::seeds;

/// Data-generating family and its scenario-specific parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ScenarioFamily {
    /// Lists drawn from the model itself with a stepped quality schedule:
    /// `gamma_k = 0.1` for the first half of rankers, then
    /// `a + (k - m/2) * 2/m`.
    SPm {
        a: f64,
        #[serde(default = "default_phi")]
        phi: f64,
    },
    /// Hidden-score lists: `tau_k` sorts `N(mu_ik, 1)` scores descending,
    /// with a block of elevated means for the relevant entities.
    SHs { a_star: f64, b_star: f64, delta_e: f64 },
    /// Hidden-score lists with a smooth logistic mean surface; no clear-cut
    /// relevant set.
    SHs3 { a_star: f64, b_star: f64 },
}

fn default_phi() -> f64 {
    0.6
}

/// A scenario: family, sizes, replicate count, and master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(flatten)]
    pub family: ScenarioFamily,
    pub n: usize,
    pub m: usize,
    pub n1: usize,
    pub replicate_count: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n1 < 1 || self.n1 > self.n {
            return Err(Error::InvalidConfig("n1 must lie in 1..=n".into()));
        }
        if self.m < 1 {
            return Err(Error::InvalidConfig("m must be >= 1".into()));
        }
        if self.replicate_count < 1 {
            return Err(Error::InvalidConfig("replicate_count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Ground truth attached to one simulated replicate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TruthBundle {
    pub ind: EnhancedIndicator,
    /// True ranker qualities (model-based scenarios).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    /// Hidden-score mean matrix, `n x m` (score-based scenarios).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<Vec<f64>>>,
}

/// The stepped quality schedule of the model-based scenario.
pub fn spm_gamma_schedule(m: usize, a: f64) -> Vec<f64> {
    let delta = 2.0 / m as f64;
    let half = m as f64 / 2.0;
    (1..=m)
        .map(|k| {
            if k as f64 <= half {
                0.1
            } else {
                a + (k as f64 - half) * delta
            }
        })
        .collect()
}

/// Generate one model-based replicate.
pub fn gen_spm(cfg: &ScenarioConfig, replicate: usize) -> Result<(Vec<Ranking>, TruthBundle)> {
    cfg.validate()?;
    let (a, phi) = match cfg.family {
        ScenarioFamily::SPm { a, phi } => (a, phi),
        _ => return Err(Error::InvalidConfig("scenario family is not s_pm".into())),
    };
    let gamma = spm_gamma_schedule(cfg.m, a);
    let ind = EnhancedIndicator::leading(cfg.n, cfg.n1);
    let taus = gamma
        .iter()
        .enumerate()
        .map(|(k, &g)| {
            let mut rng = ranker_rng(cfg.seed, replicate, k);
            sample_ranking(&ind, phi, g, &mut rng)
        })
        .collect();
    Ok((
        taus,
        TruthBundle {
            ind,
            gamma: Some(gamma),
            mu: None,
        },
    ))
}

/// Hidden-score mean for the block scenario; `i` and `k` are 1-based.
fn shs_mu(i: usize, k: usize, m: usize, n1: usize, a: f64, b: f64, delta: f64) -> f64 {
    if k as f64 <= m as f64 / 2.0 || i > n1 {
        0.0
    } else {
        a + (b - a) * k as f64 / m as f64 + (n1 - i + 1) as f64 * delta
    }
}

/// Hidden-score mean for the smooth scenario; `i` and `k` are 1-based. The
/// logistic inflection sits at entity index 70, as the scenario defines.
fn shs3_mu(i: usize, k: usize, m: usize, a: f64, b: f64) -> f64 {
    if k as f64 <= m as f64 / 2.0 {
        0.0
    } else {
        2.0 * a * (k as f64 / m as f64) / (1.0 + (-b * (70.0 - i as f64)).exp())
    }
}

/// Generate one hidden-score replicate (block mean surface).
pub fn gen_shs(cfg: &ScenarioConfig, replicate: usize) -> Result<(Vec<Ranking>, TruthBundle)> {
    cfg.validate()?;
    let (a, b, d) = match cfg.family {
        ScenarioFamily::SHs {
            a_star,
            b_star,
            delta_e,
        } => (a_star, b_star, delta_e),
        _ => return Err(Error::InvalidConfig("scenario family is not s_hs".into())),
    };
    gen_hidden_score(cfg, replicate, |i, k| shs_mu(i, k, cfg.m, cfg.n1, a, b, d))
}

/// Generate one hidden-score replicate (smooth logistic mean surface).
pub fn gen_shs3(cfg: &ScenarioConfig, replicate: usize) -> Result<(Vec<Ranking>, TruthBundle)> {
    cfg.validate()?;
    let (a, b) = match cfg.family {
        ScenarioFamily::SHs3 { a_star, b_star } => (a_star, b_star),
        _ => return Err(Error::InvalidConfig("scenario family is not s_hs3".into())),
    };
    gen_hidden_score(cfg, replicate, |i, k| shs3_mu(i, k, cfg.m, a, b))
}

fn gen_hidden_score(
    cfg: &ScenarioConfig,
    replicate: usize,
    mu: impl Fn(usize, usize) -> f64,
) -> Result<(Vec<Ranking>, TruthBundle)> {
    let mut mu_matrix = vec![vec![0.0; cfg.m]; cfg.n];
    for (i, row) in mu_matrix.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = mu(i + 1, k + 1);
        }
    }
    let taus = (0..cfg.m)
        .map(|k| {
            let mut rng = ranker_rng(cfg.seed, replicate, k);
            let scores: Vec<f64> = (0..cfg.n)
                .map(|i| {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    mu_matrix[i][k] + noise
                })
                .collect();
            let mut order: Vec<usize> = (0..cfg.n).collect();
            order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
            Ranking::from_order(&order).expect("sorted order is a permutation")
        })
        .collect();
    Ok((
        taus,
        TruthBundle {
            ind: EnhancedIndicator::leading(cfg.n, cfg.n1),
            gamma: None,
            mu: Some(mu_matrix),
        },
    ))
}

/// Generate one replicate of any scenario family.
pub fn generate(cfg: &ScenarioConfig, replicate: usize) -> Result<(Vec<Ranking>, TruthBundle)> {
    match cfg.family {
        ScenarioFamily::SPm { .. } => gen_spm(cfg, replicate),
        ScenarioFamily::SHs { .. } => gen_shs(cfg, replicate),
        ScenarioFamily::SHs3 { .. } => gen_shs3(cfg, replicate),
    }
}

fn ranker_rng(seed: u64, replicate: usize, k: usize) -> rand_chacha::ChaCha8Rng {
    seeds::stream_rng(seed, "ranker", ((replicate as u64) << 20) | k as u64)
}

/// Recovery distance: Kendall discordance of the aggregated relative order of
/// the truly relevant entities, plus `(n + n1 + 1) / 2` for each relevant
/// entity classified as background. Tied pairs contribute no discordance.
pub fn recovery_distance(hat: &TiedRanking, truth: &EnhancedIndicator) -> f64 {
    let n = truth.n();
    let n1 = truth.n1();
    debug_assert_eq!(hat.len(), n);
    let mut idx_of = vec![usize::MAX; n];
    for (idx, &e) in hat.order().iter().enumerate() {
        idx_of[e] = idx;
    }
    let effective = |e: usize| -> Option<usize> {
        let idx = idx_of[e];
        (idx < hat.tied_from()).then_some(idx)
    };
    let classified_relevant =
        |e: usize| -> bool { idx_of[e] < n1 && idx_of[e] < hat.tied_from() };

    let relevant = truth.relevant_by_rank();
    let misclassified = relevant
        .iter()
        .filter(|&&e| !classified_relevant(e))
        .count() as f64;

    let mut discordant = 0u64;
    for r in 0..relevant.len() {
        for s in r + 1..relevant.len() {
            // Truth orders entity relevant[r] before relevant[s].
            match (effective(relevant[r]), effective(relevant[s])) {
                (Some(a), Some(b)) if a > b => discordant += 1,
                (None, Some(_)) => discordant += 1,
                _ => {}
            }
        }
    }
    discordant as f64 + misclassified * (n + n1 + 1) as f64 / 2.0
}

/// Fraction of truly relevant entities placed in the aggregated relevant set.
pub fn coverage(hat: &TiedRanking, truth: &EnhancedIndicator) -> f64 {
    let n1 = truth.n1();
    let mut idx_of = vec![usize::MAX; truth.n()];
    for (idx, &e) in hat.order().iter().enumerate() {
        idx_of[e] = idx;
    }
    let recovered = truth
        .relevant_by_rank()
        .iter()
        .filter(|&&e| idx_of[e] < n1 && idx_of[e] < hat.tied_from())
        .count();
    recovered as f64 / n1 as f64
}

/// Moment estimator of the indicator from per-entity mean ranks: see
/// [`moment_estimator`].
pub fn moment_from_mean_ranks(mean: &[f64], n1: usize) -> Result<EnhancedIndicator> {
    let n = mean.len();
    if n1 < 1 || n1 > n {
        return Err(Error::InvalidConfig("n1 must lie in 1..=n".into()));
    }
    let mut by_mean: Vec<usize> = (0..n).collect();
    by_mean.sort_by(|&a, &b| mean[a].total_cmp(&mean[b]).then(a.cmp(&b)));

    let n0 = n - n1;
    let mut background = vec![false; n];
    if n0 > 0 {
        let sorted: Vec<f64> = by_mean.iter().map(|&e| mean[e]).collect();
        let mut prefix = vec![0.0; n + 1];
        let mut prefix_sq = vec![0.0; n + 1];
        for (i, &x) in sorted.iter().enumerate() {
            prefix[i + 1] = prefix[i] + x;
            prefix_sq[i + 1] = prefix_sq[i] + x * x;
        }
        let ss_of = |start: usize| {
            let sum = prefix[start + n0] - prefix[start];
            let sum_sq = prefix_sq[start + n0] - prefix_sq[start];
            sum_sq - sum * sum / n0 as f64
        };
        let min_ss = (0..=(n - n0)).map(ss_of).fold(f64::INFINITY, f64::min);
        // Ties resolve toward the window of larger mean ranks, keeping the
        // best-ranked entities relevant.
        let start = (0..=(n - n0))
            .rev()
            .find(|&s| ss_of(s) <= min_ss + 1e-9)
            .expect("at least one window");
        for &e in &by_mean[start..start + n0] {
            background[e] = true;
        }
    }

    let mut labels = vec![0u32; n];
    let mut next = 1u32;
    for &e in &by_mean {
        if !background[e] {
            labels[e] = next;
            next += 1;
        }
    }
    EnhancedIndicator::from_labels(labels)
}

/// Moment estimator of the indicator: the size-`n0` window of sorted mean
/// ranks with the smallest within-window variance becomes the background
/// set; the remaining entities are ranked by ascending mean rank.
///
/// For scalars the minimum-variance subset of fixed size is always a
/// contiguous window of the sorted sequence, so the window scan is exact.
pub fn moment_estimator(taus: &[Ranking], n1: usize) -> Result<EnhancedIndicator> {
    if taus.is_empty() {
        return Err(Error::EmptyInput("no ranking lists"));
    }
    let n = taus[0].len();
    let m = taus.len() as f64;
    let mut mean = vec![0.0; n];
    for tau in taus {
        if tau.len() != n {
            return Err(Error::EntityMismatch {
                left: n,
                right: tau.len(),
            });
        }
        for i in 0..n {
            mean[i] += tau.position(i) as f64;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    moment_from_mean_ranks(&mean, n1)
}

/// An aggregation method the benchmark harness can evaluate.
#[derive(Clone, Debug)]
pub enum Method {
    /// Posterior-mean aggregation from the Gibbs chain.
    PamaB,
    /// MLE aggregation from the cyclic-coordinate optimizer.
    PamaF,
    /// Hierarchical-prior variants of the two above.
    PamaHb,
    PamaHf,
    /// The moment estimator alone.
    Moment,
    /// Externally computed per-replicate results, keyed by replicate index.
    External {
        name: String,
        rows: BTreeMap<usize, (f64, f64)>,
    },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::PamaB => "pama_b".into(),
            Method::PamaF => "pama_f".into(),
            Method::PamaHb => "pama_hb".into(),
            Method::PamaHf => "pama_hf".into(),
            Method::Moment => "moment".into(),
            Method::External { name, .. } => format!("external:{name}"),
        }
    }

    /// Parse a built-in method name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "pama_b" => Ok(Method::PamaB),
            "pama_f" => Ok(Method::PamaF),
            "pama_hb" => Ok(Method::PamaHb),
            "pama_hf" => Ok(Method::PamaHf),
            "moment" => Ok(Method::Moment),
            other => Err(Error::UnknownMethod(other.to_string())),
        }
    }
}

/// One method on one replicate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRow {
    pub scenario: String,
    pub n: usize,
    pub m: usize,
    pub n1: usize,
    pub method: String,
    pub replicate: usize,
    pub kappa: f64,
    pub rho: f64,
}

/// Mean and standard deviation of a method over all replicates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalSummary {
    pub scenario: String,
    pub method: String,
    pub replicates: usize,
    pub mean_kappa: f64,
    pub sd_kappa: f64,
    pub mean_rho: f64,
    pub sd_rho: f64,
}

/// The benchmark output: per-replicate rows plus aggregates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: Vec<EvalSummary>,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn summary_for(&self, scenario: &str, method: &str) -> Option<&EvalSummary> {
        self.summary
            .iter()
            .find(|s| s.scenario == scenario && s.method == method)
    }
}

/// Per-replicate estimates kept alongside the benchmark metrics so quality
/// studies can inspect the fitted parameters.
#[derive(Clone, Debug)]
pub struct FitArtifacts {
    pub method: String,
    pub replicate: usize,
    pub gamma: Vec<f64>,
}

/// Run every method over every replicate of the named scenarios.
///
/// Replicates run in parallel; all randomness derives from the scenario seed
/// and the method name, so the report is deterministic.
pub fn run_benchmark(
    scenarios: &[(String, ScenarioConfig)],
    methods: &[Method],
    chain_cfg: &ChainConfig,
    mle_cfg: &MleConfig,
) -> Result<EvalReport> {
    let mut warnings = Vec::new();
    let mut unique: Vec<Method> = Vec::new();
    for method in methods {
        if unique.iter().any(|m| m.name() == method.name()) {
            warnings.push(format!(
                "duplicate method `{}` ignored; one instance kept",
                method.name()
            ));
        } else {
            unique.push(method.clone());
        }
    }
    if unique.is_empty() {
        return Err(Error::EmptyInput("no methods to benchmark"));
    }

    let mut rows = Vec::new();
    for (name, cfg) in scenarios {
        cfg.validate()?;
        let replicates: Vec<usize> = (0..cfg.replicate_count).collect();
        let mut batch: Vec<Vec<EvalRow>> = replicates
            .par_iter()
            .map(|&rep| -> Result<Vec<EvalRow>> {
                let (taus, truth) = generate(cfg, rep)?;
                let mut out = Vec::new();
                for method in &unique {
                    let (kappa, rho) =
                        evaluate_method(method, &taus, &truth, cfg, rep, chain_cfg, mle_cfg)?;
                    out.push(EvalRow {
                        scenario: name.clone(),
                        n: cfg.n,
                        m: cfg.m,
                        n1: cfg.n1,
                        method: method.name(),
                        replicate: rep,
                        kappa,
                        rho,
                    });
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for b in batch.drain(..) {
            rows.extend(b);
        }
    }

    let summary = summarize(&rows);
    Ok(EvalReport {
        rows,
        summary,
        warnings,
    })
}

fn evaluate_method(
    method: &Method,
    taus: &[Ranking],
    truth: &TruthBundle,
    cfg: &ScenarioConfig,
    rep: usize,
    chain_cfg: &ChainConfig,
    mle_cfg: &MleConfig,
) -> Result<(f64, f64)> {
    let hat = aggregate_with(method, taus, cfg, rep, chain_cfg, mle_cfg)?;
    match hat {
        Some(hat) => Ok((
            recovery_distance(&hat, &truth.ind),
            coverage(&hat, &truth.ind),
        )),
        None => {
            // External rows carry precomputed metrics.
            if let Method::External { name, rows } = method {
                rows.get(&rep).copied().ok_or_else(|| {
                    Error::MissingExternalReplicate {
                        method: name.clone(),
                        replicate: rep,
                    }
                })
            } else {
                unreachable!("only external methods skip aggregation")
            }
        }
    }
}

/// Produce the aggregated ranking of a built-in method, or `None` for
/// external result files.
pub fn aggregate_with(
    method: &Method,
    taus: &[Ranking],
    cfg: &ScenarioConfig,
    rep: usize,
    chain_cfg: &ChainConfig,
    mle_cfg: &MleConfig,
) -> Result<Option<TiedRanking>> {
    let n1 = cfg.n1;
    let derived = |label: &str| seeds::derive_seed(cfg.seed, label, rep as u64);
    match method {
        Method::PamaB | Method::PamaHb => {
            let kind = if matches!(method, Method::PamaB) {
                ModelKind::Pama
            } else {
                ModelKind::PamaH
            };
            let cc = ChainConfig {
                seed: derived(&method.name()),
                ..chain_cfg.clone()
            };
            let run = bayes::run_chain(taus, n1, None, &cc, kind)?;
            let summary = bayes::posterior_summary(&run)?;
            Ok(Some(TiedRanking::from_full(&bayes::aggregate(&summary))))
        }
        Method::PamaF => {
            let mc = MleConfig {
                seed: derived("pama_f"),
                ..mle_cfg.clone()
            };
            let fit = mle::fit_mle(taus, n1, None, &mc, ModelKind::Pama)?;
            Ok(Some(mle::aggregate_mle(&fit)))
        }
        Method::PamaHf => {
            let mc = MleConfig {
                seed: derived("pama_hf"),
                ..mle_cfg.clone()
            };
            let fit = mle::mcem_fit_pama_h(taus, n1, &mc)?;
            Ok(Some(mle::aggregate_mle(&fit)))
        }
        Method::Moment => {
            let ind = moment_estimator(taus, n1)?;
            Ok(Some(indicator_to_tied(&ind)))
        }
        Method::External { .. } => Ok(None),
    }
}

/// Aggregated ranking induced by an indicator alone: relevant entities by
/// label, background entities tied behind.
pub fn indicator_to_tied(ind: &EnhancedIndicator) -> TiedRanking {
    let mut order = ind.relevant_by_rank();
    order.extend(ind.background_entities());
    TiedRanking::new(order, ind.n1()).expect("indicator induces a valid order")
}

fn summarize(rows: &[EvalRow]) -> Vec<EvalSummary> {
    let mut grouped: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows {
        let entry = grouped
            .entry((row.scenario.clone(), row.method.clone()))
            .or_default();
        entry.0.push(row.kappa);
        entry.1.push(row.rho);
    }
    grouped
        .into_iter()
        .map(|((scenario, method), (kappas, rhos))| {
            let (mean_kappa, sd_kappa) = mean_sd(&kappas);
            let (mean_rho, sd_rho) = mean_sd(&rhos);
            EvalSummary {
                scenario,
                method,
                replicates: kappas.len(),
                mean_kappa,
                sd_kappa,
                mean_rho,
                sd_rho,
            }
        })
        .collect()
}
