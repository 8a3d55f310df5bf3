//! Maximum likelihood by cyclic coordinate ascent (Gauss-Seidel): safeguarded
//! Newton updates for `phi` and each `gamma_k`, a first-improvement swap
//! search for the indicator, and Monte Carlo EM for the hierarchical variant.
//!
//! The partial log-likelihood is concave in `gamma_k` and in `phi` (both
//! normalizer second derivatives are variances), so a Newton step with a
//! golden-section fallback cannot leave the ascent path.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::bayes::{ModelKind, PSI_BOUND};
use crate::engine::StatsEngine;
use crate::error::{Error, Result};
use crate::model::{
    log_power_law_norm, log_z_mallows, logistic_log_prior, PamaParams, SuffStats,
};
use crate::numeric::{golden_section_max, mean_sd};
use crate::rank::{EnhancedIndicator, Ranking, TiedRanking};
use crate::seeds;
use crate::simulate::moment_estimator;

/// Box constraint on `phi` and `gamma` during optimization, mirroring the
/// Bayesian prior support.
pub const PARAM_MAX: f64 = 10.0;

const MIN_CURVATURE: f64 = 1e-12;
const HILL_CLIMB_PASSES: usize = 200;

/// Optimizer settings.
#[derive(Clone, Debug)]
pub struct MleConfig {
    pub max_cycles: usize,
    /// Stop when one full cycle gains less than this.
    pub tol: f64,
    pub alpha_gamma: f64,
    pub alpha_phi: f64,
    /// Newton iterations per scalar parameter per cycle.
    pub newton_iters: usize,
    /// Monte Carlo sample size per EM expectation step.
    pub mcem_samples: usize,
    pub seed: u64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            max_cycles: 200,
            tol: 0.1,
            alpha_gamma: 1.0,
            alpha_phi: 1.0,
            newton_iters: 5,
            mcem_samples: 200,
            seed: 0,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be > 0".into()));
        }
        if !(0.0 < self.alpha_gamma && self.alpha_gamma <= 1.0)
            || !(0.0 < self.alpha_phi && self.alpha_phi <= 1.0)
        {
            return Err(Error::InvalidConfig("step lengths must lie in (0, 1]".into()));
        }
        if self.max_cycles == 0 || self.newton_iters == 0 || self.mcem_samples == 0 {
            return Err(Error::InvalidConfig(
                "max_cycles, newton_iters and mcem_samples must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of an optimization run.
#[derive(Clone, Debug)]
pub struct MleResult {
    pub params: PamaParams,
    pub psi: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    /// Final objective (joint log-likelihood; the Monte Carlo EM objective
    /// for the hierarchical fit).
    pub log_lik: f64,
    pub converged: bool,
    pub cycles_used: usize,
    /// Objective after each cycle.
    pub trace: Vec<f64>,
    /// Monte Carlo standard error per cycle (EM fits only).
    pub trace_se: Option<Vec<f64>>,
    /// False when every quality estimate collapsed to zero, leaving the
    /// common factor without information.
    pub phi_identified: bool,
}

/// First derivative of `log Z_n1(theta)` with respect to `theta`.
///
/// Uses `1/expm1` directly away from zero and a series with the `1/theta`
/// poles cancelled analytically near zero.
pub fn d_log_z_mallows(n1: usize, theta: f64) -> f64 {
    if n1 <= 1 {
        return 0.0;
    }
    if theta < 1e-4 {
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for t in 2..=n1 {
            let t = t as f64;
            s1 += t - 1.0;
            s2 += t * t - 1.0;
            s4 += t * t * t * t - 1.0;
        }
        return -s1 / 2.0 + theta * s2 / 12.0 - theta * theta * theta * s4 / 720.0;
    }
    let mut s = 0.0;
    for t in 2..=n1 {
        s += t as f64 / (t as f64 * theta).exp_m1();
    }
    s - (n1 as f64 - 1.0) / theta.exp_m1()
}

/// Second derivative of `log Z_n1(theta)`; nonnegative (it is the variance
/// of the distance under the model). The small-`theta` branch cancels the
/// `1/theta^2` poles analytically.
pub fn d2_log_z_mallows(n1: usize, theta: f64) -> f64 {
    if n1 <= 1 {
        return 0.0;
    }
    if theta < 1e-3 {
        let (mut s2, mut s4) = (0.0, 0.0);
        for t in 2..=n1 {
            let t = t as f64;
            s2 += t * t - 1.0;
            s4 += t * t * t * t - 1.0;
        }
        return s2 / 12.0 - theta * theta * s4 / 240.0;
    }
    let mut total = 0.0;
    for t in 2..=n1 {
        let x = t as f64 * theta;
        total -= (t * t) as f64 * x.exp() / (x.exp_m1() * x.exp_m1());
    }
    total + (n1 as f64 - 1.0) * theta.exp() / (theta.exp_m1() * theta.exp_m1())
}

/// First derivative of `log C*(gamma)`.
pub fn d_log_power_law_norm(gamma: f64, n1: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 1..=(n1 + 1) {
        let lt = (t as f64).ln();
        let w = (-gamma * lt).exp();
        num += w * lt;
        den += w;
    }
    -num / den
}

/// Second derivative of `log C*(gamma)`: the variance of `ln t` under the
/// truncated power law, hence nonnegative.
pub fn d2_log_power_law_norm(gamma: f64, n1: usize) -> f64 {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for t in 1..=(n1 + 1) {
        let lt = (t as f64).ln();
        let w = (-gamma * lt).exp();
        s0 += w;
        s1 += w * lt;
        s2 += w * lt * lt;
    }
    (s0 * s2 - s1 * s1) / (s0 * s0)
}

/// The partial objective in one quality parameter, its gradient, and its
/// curvature, for a weighted group of lists sharing that parameter.
#[derive(Clone, Copy, Debug)]
pub struct GammaPartial {
    pub n1: usize,
    pub n0: f64,
    pub weight: f64,
    pub sum_log_b: f64,
    pub sum_dist: f64,
    pub phi: f64,
}

impl GammaPartial {
    pub fn from_data(params: &PamaParams, k: usize, rankings: &[Ranking]) -> Result<Self> {
        let stats = SuffStats::compute(&rankings[k], &params.ind)?;
        Ok(Self {
            n1: params.ind.n1(),
            n0: params.ind.n0() as f64,
            weight: 1.0,
            sum_log_b: stats.log_b,
            sum_dist: stats.dist as f64,
            phi: params.phi,
        })
    }

    pub fn value(&self, g: f64) -> f64 {
        -g * self.sum_log_b
            - self.weight * self.n0 * log_power_law_norm(g, self.n1)
            - self.phi * g * self.sum_dist
            - self.weight * log_z_mallows(self.n1, self.phi * g)
    }

    pub fn d1(&self, g: f64) -> f64 {
        -self.sum_log_b
            - self.weight * self.n0 * d_log_power_law_norm(g, self.n1)
            - self.phi * self.sum_dist
            - self.weight * self.phi * d_log_z_mallows(self.n1, self.phi * g)
    }

    pub fn d2(&self, g: f64) -> f64 {
        -self.weight * self.n0 * d2_log_power_law_norm(g, self.n1)
            - self.weight * self.phi * self.phi * d2_log_z_mallows(self.n1, self.phi * g)
    }

    /// One safeguarded ascent step from `g`.
    pub fn step(&self, g: f64, alpha: f64) -> f64 {
        safeguarded_step(g, alpha, |x| self.value(x), self.d1(g), self.d2(g))
    }
}

/// The partial objective in the common factor across all groups.
#[derive(Clone, Debug)]
pub struct PhiPartial {
    pub n1: usize,
    /// Per group: `(gamma, weight, sum_dist)`.
    pub groups: Vec<(f64, f64, f64)>,
}

impl PhiPartial {
    pub fn from_data(params: &PamaParams, rankings: &[Ranking]) -> Result<Self> {
        let mut groups = Vec::with_capacity(rankings.len());
        for (k, tau) in rankings.iter().enumerate() {
            let stats = SuffStats::compute(tau, &params.ind)?;
            groups.push((params.gamma[k], 1.0, stats.dist as f64));
        }
        Ok(Self {
            n1: params.ind.n1(),
            groups,
        })
    }

    pub fn value(&self, phi: f64) -> f64 {
        self.groups
            .iter()
            .map(|&(g, w, d)| -phi * g * d - w * log_z_mallows(self.n1, phi * g))
            .sum()
    }

    pub fn d1(&self, phi: f64) -> f64 {
        self.groups
            .iter()
            .map(|&(g, w, d)| -g * d - w * g * d_log_z_mallows(self.n1, phi * g))
            .sum()
    }

    pub fn d2(&self, phi: f64) -> f64 {
        self.groups
            .iter()
            .map(|&(g, w, _)| -w * g * g * d2_log_z_mallows(self.n1, phi * g))
            .sum()
    }

    /// One safeguarded ascent step from `phi`.
    pub fn step(&self, phi: f64, alpha: f64) -> f64 {
        safeguarded_step(phi, alpha, |x| self.value(x), self.d1(phi), self.d2(phi))
    }
}

/// One safeguarded ascent step of a concave 1-D objective on `[0, PARAM_MAX]`:
/// a damped Newton step when it helps, otherwise a golden-section search in
/// the ascent direction; never decreases the objective.
fn safeguarded_step(
    x: f64,
    alpha: f64,
    value: impl Fn(f64) -> f64,
    d1: f64,
    d2: f64,
) -> f64 {
    if d1.abs() < 1e-14 {
        return x;
    }
    let fx = value(x);
    if d2 < -MIN_CURVATURE {
        let candidate = (x - alpha * d1 / d2).clamp(0.0, PARAM_MAX);
        if value(candidate) >= fx {
            return candidate;
        }
    }
    let (lo, hi) = if d1 > 0.0 { (x, PARAM_MAX) } else { (0.0, x) };
    if hi - lo < 1e-14 {
        return x;
    }
    let (xg, fg) = golden_section_max(&value, lo, hi, 60);
    if fg > fx {
        xg
    } else {
        x
    }
}

/// One safeguarded Newton update of `gamma_k` holding everything else fixed.
pub fn newton_step_gamma(
    params: &PamaParams,
    k: usize,
    rankings: &[Ranking],
    cfg: &MleConfig,
) -> Result<f64> {
    let partial = GammaPartial::from_data(params, k, rankings)?;
    let g = params.gamma[k];
    Ok(safeguarded_step(
        g,
        cfg.alpha_gamma,
        |x| partial.value(x),
        partial.d1(g),
        partial.d2(g),
    ))
}

/// One safeguarded Newton update of `phi` holding everything else fixed.
pub fn newton_step_phi(params: &PamaParams, rankings: &[Ranking], cfg: &MleConfig) -> Result<f64> {
    let partial = PhiPartial::from_data(params, rankings)?;
    let phi = params.phi;
    Ok(safeguarded_step(
        phi,
        cfg.alpha_phi,
        |x| partial.value(x),
        partial.d1(phi),
        partial.d2(phi),
    ))
}

/// First-improvement swap search over the indicator: apply any adjacent
/// label swap or rank-`n1`/background exchange that strictly increases the
/// log-likelihood, until none does.
pub fn ascent_search_indicator(
    params: &PamaParams,
    rankings: &[Ranking],
) -> Result<EnhancedIndicator> {
    if rankings.len() != params.gamma.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rankings but {} gamma values",
            rankings.len(),
            params.gamma.len()
        )));
    }
    let mut engine = StatsEngine::new(rankings, &params.ind);
    engine.hill_climb(&params.gamma, params.phi, None, HILL_CLIMB_PASSES);
    Ok(engine.indicator())
}

/// Full cyclic-coordinate fit. `kind` selects the plain or covariate model;
/// the hierarchical variant lives in [`mcem_fit_pama_h`].
pub fn fit_mle(
    rankings: &[Ranking],
    n1: usize,
    covariates: Option<&[Vec<f64>]>,
    cfg: &MleConfig,
    kind: ModelKind,
) -> Result<MleResult> {
    cfg.validate()?;
    if rankings.is_empty() {
        return Err(Error::EmptyInput("no ranking lists"));
    }
    match kind {
        ModelKind::Pama => {}
        ModelKind::Covariate => {
            let x = covariates.ok_or_else(|| {
                Error::InvalidConfig("covariate model requires a covariate matrix".into())
            })?;
            if x.len() != rankings[0].len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} covariate rows for {} entities",
                    x.len(),
                    rankings[0].len()
                )));
            }
        }
        ModelKind::PamaH => {
            return Err(Error::InvalidConfig(
                "hierarchical MLE uses mcem_fit_pama_h".into(),
            ))
        }
    }

    let m = rankings.len();
    let mut rng = seeds::stream_rng(cfg.seed, "mle-init", 0);
    let ind = moment_estimator(rankings, n1)?;
    let mut engine = StatsEngine::new(rankings, &ind);
    let mut phi: f64 = 1.0 - rng.gen::<f64>();
    let mut gamma: Vec<f64> = (0..m).map(|_| 1.0 - rng.gen::<f64>()).collect();
    let p = covariates.map_or(0, |x| x.first().map_or(0, |r| r.len()));
    let mut psi = vec![0.0; p];

    let covariate = matches!(kind, ModelKind::Covariate);
    let objective = |engine: &StatsEngine, gamma: &[f64], phi: f64, psi: &[f64]| -> f64 {
        let mut obj = engine.weighted_log_lik(gamma, phi);
        if covariate {
            obj += logistic_log_prior(&engine.indicator(), covariates.unwrap(), psi);
        }
        obj
    };

    let mut prev = objective(&engine, &gamma, phi, &psi);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut cycles_used = cfg.max_cycles;
    for cycle in 1..=cfg.max_cycles {
        let n0 = (engine.n - engine.n1) as f64;
        for k in 0..m {
            let sums = engine.group_sums(m);
            let partial = GammaPartial {
                n1: engine.n1,
                n0,
                weight: sums[k].weight,
                sum_log_b: sums[k].log_b,
                sum_dist: sums[k].dist,
                phi,
            };
            for _ in 0..cfg.newton_iters {
                let g = gamma[k];
                gamma[k] = safeguarded_step(
                    g,
                    cfg.alpha_gamma,
                    |x| partial.value(x),
                    partial.d1(g),
                    partial.d2(g),
                );
            }
        }
        {
            let sums = engine.group_sums(m);
            let partial = PhiPartial {
                n1: engine.n1,
                groups: gamma
                    .iter()
                    .zip(&sums)
                    .map(|(&g, s)| (g, s.weight, s.dist))
                    .collect(),
            };
            for _ in 0..cfg.newton_iters {
                phi = safeguarded_step(
                    phi,
                    cfg.alpha_phi,
                    |x| partial.value(x),
                    partial.d1(phi),
                    partial.d2(phi),
                );
            }
        }
        let cov_adj = covariate.then(|| (covariates.unwrap(), psi.as_slice()));
        engine.hill_climb_shuffled(&gamma, phi, cov_adj, HILL_CLIMB_PASSES, &mut rng);
        if covariate {
            psi = logistic_mle(&engine.indicator(), covariates.unwrap(), &psi, 25);
        }

        let obj = objective(&engine, &gamma, phi, &psi);
        trace.push(obj);
        if obj - prev < cfg.tol {
            converged = true;
            cycles_used = cycle;
            break;
        }
        prev = obj;
    }

    let log_lik = *trace.last().expect("at least one cycle runs");
    let phi_identified = gamma.iter().any(|&g| g > 1e-6);
    Ok(MleResult {
        params: PamaParams {
            ind: engine.indicator(),
            phi,
            gamma,
        },
        psi: covariate.then_some(psi),
        alpha: None,
        log_lik,
        converged,
        cycles_used,
        trace,
        trace_se: None,
        phi_identified,
    })
}

/// Aggregated ranking from a fit: relevant entities by estimated label at
/// ranks `1..=n1`, all background entities tied behind.
pub fn aggregate_mle(result: &MleResult) -> TiedRanking {
    crate::simulate::indicator_to_tied(&result.params.ind)
}

/// Maximize the logistic relevance term in `psi` by damped Newton steps with
/// backtracking, inside the same box the Bayesian sampler uses.
fn logistic_mle(ind: &EnhancedIndicator, x: &[Vec<f64>], start: &[f64], iters: usize) -> Vec<f64> {
    logistic_mle_boxed(ind, x, start, iters, PSI_BOUND)
}

pub(crate) fn logistic_mle_boxed(
    ind: &EnhancedIndicator,
    x: &[Vec<f64>],
    start: &[f64],
    iters: usize,
    bound: f64,
) -> Vec<f64> {
    let p = start.len();
    if p == 0 {
        return Vec::new();
    }
    let mut psi = start.to_vec();
    let obj = |psi: &[f64]| logistic_log_prior(ind, x, psi);
    for _ in 0..iters {
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (i, row) in x.iter().enumerate() {
            let z: f64 = row.iter().zip(&psi).map(|(a, b)| a * b).sum();
            let pr = 1.0 / (1.0 + (-z).exp());
            let y = ind.is_relevant(i) as u8 as f64;
            for a in 0..p {
                grad[a] += row[a] * (y - pr);
                for b in 0..p {
                    hess[a][b] += row[a] * row[b] * pr * (1.0 - pr);
                }
            }
        }
        if grad.iter().all(|g| g.abs() < 1e-10) {
            break;
        }
        // Newton direction: solve H d = grad (H positive semidefinite).
        for (a, row) in hess.iter_mut().enumerate() {
            row[a] += 1e-10;
        }
        let dir = match solve_sym(&mut hess, &grad) {
            Some(d) => d,
            None => break,
        };
        let base = obj(&psi);
        let mut t = 1.0;
        let mut stepped = false;
        for _ in 0..40 {
            let cand: Vec<f64> = psi
                .iter()
                .zip(&dir)
                .map(|(v, d)| (v + t * d).clamp(-bound, bound))
                .collect();
            if obj(&cand) >= base {
                psi = cand;
                stepped = true;
                break;
            }
            t *= 0.5;
        }
        if !stepped {
            break;
        }
    }
    psi
}

/// Gaussian elimination with partial pivoting for a small symmetric system.
fn solve_sym(a: &mut [Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let p = b.len();
    let mut rhs = b.to_vec();
    for col in 0..p {
        let pivot = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..p {
            let f = a[row][col] / a[col][col];
            for k in col..p {
                a[row][k] -= f * a[col][k];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; p];
    for col in (0..p).rev() {
        let mut v = rhs[col];
        for k in col + 1..p {
            v -= a[col][k] * x[k];
        }
        x[col] = v / a[col][col];
    }
    Some(x)
}

/// Monte Carlo EM for the hierarchical model: the expectation step samples
/// each quality from its conditional by a random-walk chain, the
/// maximization step runs the coordinate updates on the averaged statistics
/// and sets the rate to the reciprocal mean quality.
pub fn mcem_fit_pama_h(rankings: &[Ranking], n1: usize, cfg: &MleConfig) -> Result<MleResult> {
    cfg.validate()?;
    if rankings.is_empty() {
        return Err(Error::EmptyInput("no ranking lists"));
    }
    let m = rankings.len();
    let mut rng = seeds::stream_rng(cfg.seed, "mcem", 0);
    let ind = moment_estimator(rankings, n1)?;
    let mut engine = StatsEngine::new(rankings, &ind);
    let mut phi: f64 = 1.0 - rng.gen::<f64>();
    let mut alpha: f64 = 1.0;
    let mut gamma_bar: Vec<f64> = vec![1.0; m];
    let mut sample_size = cfg.mcem_samples;

    let mut trace = Vec::new();
    let mut trace_se = Vec::new();
    let mut q_prev = f64::NEG_INFINITY;
    let mut converged = false;
    let mut cycles_used = cfg.max_cycles;
    for cycle in 1..=cfg.max_cycles {
        // E-step: per-list conditional samples of gamma.
        let n0 = (engine.n - engine.n1) as f64;
        let sums = engine.group_sums(m);
        let mut samples: Vec<Vec<f64>> = Vec::with_capacity(m);
        for k in 0..m {
            let s = &sums[k];
            let log_f = |g: f64| -> f64 {
                -alpha * g
                    - g * s.log_b
                    - n0 * log_power_law_norm(g, engine.n1)
                    - phi * g * s.dist
                    - log_z_mallows(engine.n1, phi * g)
            };
            samples.push(rw_samples(log_f, gamma_bar[k].max(0.1), sample_size, &mut rng));
        }
        for k in 0..m {
            gamma_bar[k] = samples[k].iter().sum::<f64>() / sample_size as f64;
        }

        // M-step: indicator, then phi over the sampled qualities, then the
        // rate (closed form: reciprocal mean quality).
        engine.hill_climb(&gamma_bar, phi, None, HILL_CLIMB_PASSES);
        let sums = engine.group_sums(m);
        for _ in 0..cfg.newton_iters {
            let (mut d1, mut d2) = (0.0, 0.0);
            for k in 0..m {
                for &g in &samples[k] {
                    d1 -= g * (sums[k].dist + d_log_z_mallows(engine.n1, phi * g));
                    d2 -= g * g * d2_log_z_mallows(engine.n1, phi * g);
                }
            }
            d1 /= sample_size as f64;
            d2 /= sample_size as f64;
            let value = |x: f64| -> f64 {
                let mut v = 0.0;
                for k in 0..m {
                    for &g in &samples[k] {
                        v -= x * g * sums[k].dist + log_z_mallows(engine.n1, x * g);
                    }
                }
                v / sample_size as f64
            };
            phi = safeguarded_step(phi, cfg.alpha_phi, value, d1, d2);
        }
        let total_gamma: f64 = samples.iter().flatten().sum();
        alpha = (m * sample_size) as f64 / total_gamma.max(1e-12);

        // Monte Carlo estimate of the objective and its standard error; the
        // gamma-free factor (log A*) shifts every sample equally.
        let per_sample: Vec<f64> = (0..sample_size)
            .map(|s| {
                let mut q = 0.0;
                for k in 0..m {
                    let g = samples[k][s];
                    q += -sums[k].log_b * g
                        - n0 * log_power_law_norm(g, engine.n1)
                        - phi * g * sums[k].dist
                        - log_z_mallows(engine.n1, phi * g);
                    q += alpha.ln() - alpha * g;
                }
                q
            })
            .collect();
        let (mean_q, sd_q) = mean_sd(&per_sample);
        let q = mean_q - engine.total_log_a();
        let se = sd_q / (sample_size as f64).sqrt();
        trace.push(q);
        trace_se.push(se);

        // A single-cycle gain is masked by Monte Carlo noise: judge
        // convergence on the average gain over the last three cycles, and
        // grow the sample (capped) when the raw gain falls inside the noise
        // band.
        let gain = q - q_prev;
        if trace.len() >= 3 {
            let avg = (q - trace[trace.len() - 3]) / 2.0;
            if avg < cfg.tol {
                converged = true;
                cycles_used = cycle;
                break;
            }
        }
        if cycle > 1 && gain < 3.0 * se && sample_size < cfg.mcem_samples.saturating_mul(16) {
            sample_size = sample_size + sample_size / 2;
        }
        q_prev = q;
    }

    let log_lik = *trace.last().expect("at least one cycle runs");
    let phi_identified = gamma_bar.iter().any(|&g| g > 1e-6);
    Ok(MleResult {
        params: PamaParams {
            ind: engine.indicator(),
            phi,
            gamma: gamma_bar,
        },
        psi: None,
        alpha: Some(alpha),
        log_lik,
        converged,
        cycles_used,
        trace,
        trace_se: Some(trace_se),
        phi_identified,
    })
}

/// Random-walk Metropolis samples from a 1-D log-density on `[0, inf)`.
fn rw_samples(
    log_f: impl Fn(f64) -> f64,
    start: f64,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    const BURN: usize = 100;
    const SIGMA: f64 = 0.3;
    let mut x = start;
    let mut fx = log_f(x);
    let mut out = Vec::with_capacity(count);
    for step in 0..(BURN + count) {
        let noise: f64 = StandardNormal.sample(rng);
        let proposal = x + SIGMA * noise;
        if proposal >= 0.0 {
            let fp = log_f(proposal);
            if fp - fx >= 0.0 || rng.gen::<f64>().ln() < fp - fx {
                x = proposal;
                fx = fp;
            }
        }
        if step >= BURN {
            out.push(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_lik_joint, sample_ranking};
    use crate::rank::all_indicators;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn synth(seed: u64, n: usize, n1: usize, m: usize, phi: f64, g: f64) -> Vec<Ranking> {
        let ind = EnhancedIndicator::leading(n, n1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| sample_ranking(&ind, phi, g, &mut rng))
            .collect()
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn analytic_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = synth(2, 8, 3, 4, 0.7, 1.8);
        for _ in 0..20 {
            let phi: f64 = rng.gen_range(0.05..2.0);
            let gamma: Vec<f64> = (0..4).map(|_| rng.gen_range(0.2..2.5)).collect();
            let ind = EnhancedIndicator::leading(8, 3);
            let params = PamaParams::new(ind, phi, gamma.clone()).unwrap();
            let k = rng.gen_range(0..4);

            let gp = GammaPartial::from_data(&params, k, &data).unwrap();
            let g = gamma[k];
            let h = 1e-5 * g.max(0.5);
            assert_relative_eq!(gp.d1(g), fd(|x| gp.value(x), g, h), max_relative = 1e-4);
            assert_relative_eq!(gp.d2(g), fd(|x| gp.d1(x), g, h), max_relative = 1e-4);

            let pp = PhiPartial::from_data(&params, &data).unwrap();
            let h = 1e-5 * phi.max(0.5);
            assert_relative_eq!(pp.d1(phi), fd(|x| pp.value(x), phi, h), max_relative = 1e-4);
            assert_relative_eq!(pp.d2(phi), fd(|x| pp.d1(x), phi, h), max_relative = 1e-4);
        }
    }

    #[test]
    fn dlogz_small_theta_branch_is_continuous() {
        for n1 in [2, 5, 10] {
            // Straddle each branch threshold by a negligible margin.
            let below = d_log_z_mallows(n1, 1e-4 - 1e-12);
            let above = d_log_z_mallows(n1, 1e-4 + 1e-12);
            assert_relative_eq!(below, above, max_relative = 1e-8);
            let below2 = d2_log_z_mallows(n1, 1e-3 - 1e-12);
            let above2 = d2_log_z_mallows(n1, 1e-3 + 1e-12);
            assert_relative_eq!(below2, above2, max_relative = 1e-7);
            // At zero: mean distance is n1(n1-1)/4, variance matches the
            // sum of per-stage uniform variances.
            assert_relative_eq!(
                d_log_z_mallows(n1, 0.0),
                -((n1 * (n1 - 1)) as f64) / 4.0,
                max_relative = 1e-12
            );
            let var: f64 = (2..=n1).map(|t| ((t * t - 1) as f64) / 12.0).sum();
            assert_relative_eq!(d2_log_z_mallows(n1, 0.0), var, max_relative = 1e-12);
        }
    }

    #[test]
    fn newton_step_is_stationary_at_optimum_and_ascends() {
        let data = synth(9, 7, 2, 3, 0.8, 1.5);
        let ind = EnhancedIndicator::leading(7, 2);
        let cfg = MleConfig::default();

        // Locate the optimum by a long golden-section run, then confirm the
        // Newton step does not move from it.
        let params = PamaParams::new(ind.clone(), 0.8, vec![1.0, 1.0, 1.0]).unwrap();
        let gp = GammaPartial::from_data(&params, 1, &data).unwrap();
        let (gstar, _) = golden_section_max(|x| gp.value(x), 0.0, PARAM_MAX, 200);
        let mut at_opt = params.clone();
        at_opt.gamma[1] = gstar;
        let stepped = newton_step_gamma(&at_opt, 1, &data, &cfg).unwrap();
        assert_relative_eq!(stepped, gstar, epsilon = 1e-5);

        // From random starts the safeguarded step never decreases the
        // partial objective.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let g0: f64 = rng.gen_range(0.0..6.0);
            let mut p = params.clone();
            p.gamma[1] = g0;
            let next = newton_step_gamma(&p, 1, &data, &cfg).unwrap();
            assert!(gp.value(next) >= gp.value(g0) - 1e-12);

            let phi0: f64 = rng.gen_range(0.0..6.0);
            let mut p = params.clone();
            p.phi = phi0;
            let pp = PhiPartial::from_data(&p, &data).unwrap();
            let next = newton_step_phi(&p, &data, &cfg).unwrap();
            assert!(pp.value(next) >= pp.value(phi0) - 1e-12);
        }
    }

    #[test]
    fn phi_step_is_zero_when_all_gamma_vanish() {
        let data = synth(10, 6, 2, 3, 0.5, 1.0);
        let ind = EnhancedIndicator::leading(6, 2);
        let params = PamaParams::new(ind, 1.3, vec![0.0, 0.0, 0.0]).unwrap();
        let next = newton_step_phi(&params, &data, &MleConfig::default()).unwrap();
        assert_eq!(next, 1.3);
    }

    #[test]
    fn indicator_search_reaches_local_then_global_optimum_small() {
        // Strong-signal data on an exhaustively enumerable instance: the
        // hill climb must land on the global argmax of the likelihood over
        // indicator states for most seeds.
        let n = 5;
        let n1 = 2;
        let m = 5;
        let mut hits = 0;
        let trials = 20;
        for seed in 0..trials {
            let data = synth(100 + seed, n, n1, m, 2.0, 2.5);
            let gamma = vec![2.5; m];
            let phi = 2.0;
            let params =
                PamaParams::new(moment_estimator(&data, n1).unwrap(), phi, gamma.clone())
                    .unwrap();
            let found = ascent_search_indicator(&params, &data).unwrap();

            let best = all_indicators(n, n1)
                .into_iter()
                .max_by(|a, b| {
                    let pa = PamaParams::new(a.clone(), phi, gamma.clone()).unwrap();
                    let pb = PamaParams::new(b.clone(), phi, gamma.clone()).unwrap();
                    log_lik_joint(&data, &pa)
                        .unwrap()
                        .total_cmp(&log_lik_joint(&data, &pb).unwrap())
                })
                .unwrap();
            if found == best {
                hits += 1;
            }
            // Every local optimum: no improving move remains.
            let p = PamaParams::new(found.clone(), phi, gamma.clone()).unwrap();
            assert_eq!(ascent_search_indicator(&p, &data).unwrap(), found);
        }
        assert!(hits >= trials * 9 / 10, "only {hits}/{trials} global");
    }

    #[test]
    fn fit_mle_trace_is_nondecreasing_and_deterministic() {
        let data = synth(33, 10, 3, 5, 0.6, 2.0);
        let cfg = MleConfig {
            seed: 7,
            ..MleConfig::default()
        };
        let fit = fit_mle(&data, 3, None, &cfg, ModelKind::Pama).unwrap();
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "trace decreased: {w:?}");
        }
        assert!(fit.phi_identified);
        let fit2 = fit_mle(&data, 3, None, &cfg, ModelKind::Pama).unwrap();
        assert_eq!(fit.params.phi, fit2.params.phi);
        assert_eq!(fit.params.gamma, fit2.params.gamma);
        assert_eq!(fit.params.ind, fit2.params.ind);

        // The reported objective is the joint log-likelihood.
        assert_relative_eq!(
            fit.log_lik,
            log_lik_joint(&data, &fit.params).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn fit_mle_huge_tol_converges_after_one_cycle() {
        let data = synth(41, 6, 2, 3, 0.6, 1.5);
        let cfg = MleConfig {
            tol: 1e9,
            seed: 1,
            ..MleConfig::default()
        };
        let fit = fit_mle(&data, 2, None, &cfg, ModelKind::Pama).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.cycles_used, 1);
    }

    #[test]
    fn aggregate_mle_shapes() {
        let ind = EnhancedIndicator::from_labels(vec![1, 2, 0, 0]).unwrap();
        let fit = MleResult {
            params: PamaParams::new(ind, 0.5, vec![1.0]).unwrap(),
            psi: None,
            alpha: None,
            log_lik: 0.0,
            converged: true,
            cycles_used: 1,
            trace: vec![0.0],
            trace_se: None,
            phi_identified: true,
        };
        let tied = aggregate_mle(&fit);
        assert_eq!(tied.order()[..2], [0, 1]);
        assert_eq!(tied.tied_from(), 2);

        // n1 = n: fully strict ranking.
        let full = EnhancedIndicator::from_labels(vec![2, 1, 3]).unwrap();
        let fit2 = MleResult {
            params: PamaParams::new(full, 0.5, vec![1.0]).unwrap(),
            ..fit
        };
        let tied2 = aggregate_mle(&fit2);
        assert_eq!(tied2.tied_from(), 3);
        assert_eq!(tied2.order(), &[1, 0, 2]);
    }

    #[test]
    fn logistic_mle_recovers_separating_direction() {
        // A single binary covariate perfectly aligned with relevance: the
        // boxed maximizer pushes the coefficient to the box edge.
        let ind = EnhancedIndicator::from_labels(vec![1, 2, 0, 0]).unwrap();
        let x = vec![vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]];
        let psi = logistic_mle(&ind, &x, &[0.0], 60);
        assert!(psi[0] > 5.0, "psi = {:?}", psi);
        assert!(psi[0] <= PSI_BOUND + 1e-12);
    }

    #[test]
    fn covariate_fit_reports_psi_and_ascends() {
        let data = synth(55, 8, 3, 4, 0.8, 2.0);
        // Covariate equal to +1 for true-relevant entities.
        let x: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![if i < 3 { 1.0 } else { -1.0 }])
            .collect();
        let cfg = MleConfig {
            seed: 3,
            ..MleConfig::default()
        };
        let fit = fit_mle(&data, 3, Some(&x), &cfg, ModelKind::Covariate).unwrap();
        let psi = fit.psi.expect("covariate fit carries psi");
        assert!(psi[0] > 0.0);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn mcem_exponential_rate_is_reciprocal_mean() {
        // With the qualities pinned by near-degenerate data this is hard to
        // arrange end-to-end; check the closed form directly instead.
        let samples = [vec![2.0, 2.0], vec![2.0, 2.0]];
        let total: f64 = samples.iter().flatten().sum();
        let alpha = (2.0 * 2.0) / total;
        assert_relative_eq!(alpha, 0.5);
    }

    #[test]
    fn mcem_fit_runs_and_tracks_objective() {
        let data = synth(66, 8, 2, 4, 0.6, 1.5);
        let cfg = MleConfig {
            mcem_samples: 100,
            max_cycles: 30,
            seed: 5,
            ..MleConfig::default()
        };
        let fit = mcem_fit_pama_h(&data, 2, &cfg).unwrap();
        let alpha = fit.alpha.expect("hierarchical fit carries alpha");
        assert!(alpha > 0.0);
        let se = fit.trace_se.as_ref().unwrap();
        assert_eq!(se.len(), fit.trace.len());
        // Objective non-decreasing up to Monte Carlo noise.
        for i in 1..fit.trace.len() {
            assert!(
                fit.trace[i] >= fit.trace[i - 1] - 3.0 * (se[i] + se[i - 1]),
                "objective dropped beyond noise at cycle {i}: {:?}",
                fit.trace
            );
        }
        // Closed-form rate: reciprocal of the mean sampled quality.
        let mean_gamma = fit.params.gamma.iter().sum::<f64>() / fit.params.gamma.len() as f64;
        assert_relative_eq!(alpha, 1.0 / mean_gamma, max_relative = 0.05);
    }

    #[test]
    fn solve_sym_small_system() {
        let mut a = vec![vec![4.0, 1.0], vec![1.0, 3.0]];
        let x = solve_sym(&mut a, &[1.0, 2.0]).unwrap();
        assert_relative_eq!(4.0 * x[0] + x[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[0] + 3.0 * x[1], 2.0, epsilon = 1e-12);
    }
}
