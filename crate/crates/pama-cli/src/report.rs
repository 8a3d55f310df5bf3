//! The JSON result document written by `pama fit`.
//!
//! `meta` carries run provenance (config echo, seed, wall time); `results`
//! holds every numeric payload and is byte-identical across re-runs with the
//! same config and seed.

use pama_core::bayes::{AcceptanceRates, PosteriorSummary};
use pama_core::mle::MleResult;
use serde::{Deserialize, Serialize};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub meta: Meta,
    pub results: Results,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Meta {
    pub mode: String,
    pub model: String,
    pub seed: u64,
    pub wall_time_seconds: f64,
    pub n: usize,
    pub m: usize,
    pub n1: usize,
    pub partial_lists: bool,
    pub entities: Vec<String>,
    /// Verbatim echo of the run configuration.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Results {
    Bayes(BayesResults),
    Mle(MleResults),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BayesResults {
    /// Entity names by ascending mean label.
    pub aggregate: Vec<String>,
    pub i_bar: Vec<f64>,
    pub phi_bar: f64,
    pub gamma_bar: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_bar: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiSummary>,
    pub acceptance: Acceptance,
    /// Relative paths of companion tables, when written.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_post_trace: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiSummary {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    /// Posterior probability of each coefficient being positive.
    pub positive_probability: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Acceptance {
    pub indicator: f64,
    pub phi: f64,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<f64>,
}

impl From<AcceptanceRates> for Acceptance {
    fn from(a: AcceptanceRates) -> Self {
        Self {
            indicator: a.indicator,
            phi: a.phi,
            gamma: a.gamma,
            psi: a.psi,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MleResults {
    /// Entity names: the estimated relevant block in order, then the tied
    /// background block (by entity index).
    pub aggregate: Vec<String>,
    /// Index where the tied block starts.
    pub tied_from: usize,
    pub ind_hat: Vec<u32>,
    pub phi_hat: f64,
    pub phi_identified: bool,
    pub gamma_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_hat: Option<PsiSummary>,
    pub log_lik: f64,
    pub converged: bool,
    pub cycles_used: usize,
    pub trace: Vec<f64>,
}

pub fn bayes_results(
    summary: &PosteriorSummary,
    entities: &[String],
    covariate_names: Option<&[String]>,
) -> BayesResults {
    let agg = pama_core::bayes::aggregate(summary);
    let aggregate = agg.order().iter().map(|&e| entities[e].clone()).collect();
    BayesResults {
        aggregate,
        i_bar: summary.i_bar.clone(),
        phi_bar: summary.phi_bar,
        gamma_bar: summary.gamma_bar.clone(),
        alpha_bar: summary.alpha_bar,
        psi: summary.psi_bar.as_ref().map(|mean| PsiSummary {
            names: covariate_names.map(<[String]>::to_vec).unwrap_or_default(),
            mean: mean.clone(),
            positive_probability: summary.psi_pos_prob.clone().unwrap_or_default(),
        }),
        acceptance: summary.acceptance.into(),
        log_post_trace: None,
        samples: None,
    }
}

pub fn mle_results(
    fit: &MleResult,
    entities: &[String],
    covariate_names: Option<&[String]>,
) -> MleResults {
    let tied = pama_core::mle::aggregate_mle(fit);
    MleResults {
        aggregate: tied.order().iter().map(|&e| entities[e].clone()).collect(),
        tied_from: tied.tied_from(),
        ind_hat: fit.params.ind.labels().to_vec(),
        phi_hat: fit.params.phi,
        phi_identified: fit.phi_identified,
        gamma_hat: fit.params.gamma.clone(),
        alpha_hat: fit.alpha,
        psi_hat: fit.psi.as_ref().map(|psi| PsiSummary {
            names: covariate_names.map(<[String]>::to_vec).unwrap_or_default(),
            mean: psi.clone(),
            positive_probability: psi.iter().map(|&v| f64::from(v > 0.0)).collect(),
        }),
        log_lik: fit.log_lik,
        converged: fit.converged,
        cycles_used: fit.cycles_used,
        trace: fit.trace.clone(),
    }
}
