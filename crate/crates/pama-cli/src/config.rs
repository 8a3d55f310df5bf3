//! The JSON run-configuration schema (version 1).

use std::path::{Path, PathBuf};

use anyhow::Context;
use pama_core::bayes::{ChainConfig, ModelKind};
use pama_core::mle::MleConfig;
use pama_core::simulate::ScenarioConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FitBayes,
    FitMle,
    Simulate,
    Benchmark,
    Check,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    #[default]
    Pama,
    PamaH,
    Covariate,
}

impl From<ModelChoice> for ModelKind {
    fn from(m: ModelChoice) -> Self {
        match m {
            ModelChoice::Pama => ModelKind::Pama,
            ModelChoice::PamaH => ModelKind::PamaH,
            ModelChoice::Covariate => ModelKind::Covariate,
        }
    }
}

/// How to treat ranking files with respect to missing cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartialPolicy {
    /// Partial when any cell is empty, full otherwise.
    #[default]
    Auto,
    /// Always treat lists as partial.
    Yes,
    /// Reject files with empty cells.
    No,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub b: f64,
    pub sigma_phi: f64,
    pub sigma_gamma: f64,
    pub sigma_psi: f64,
}

impl Default for ChainSettings {
    fn default() -> Self {
        let c = ChainConfig::default();
        Self {
            iterations: c.iterations,
            burn_in: c.burn_in,
            thin: c.thin,
            b: c.b,
            sigma_phi: c.sigma_phi,
            sigma_gamma: c.sigma_gamma,
            sigma_psi: c.sigma_psi,
        }
    }
}

impl ChainSettings {
    pub fn to_config(&self, seed: u64) -> ChainConfig {
        ChainConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            b: self.b,
            sigma_phi: self.sigma_phi,
            sigma_gamma: self.sigma_gamma,
            sigma_psi: self.sigma_psi,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MleSettings {
    pub max_cycles: usize,
    pub tol: f64,
    pub alpha_gamma: f64,
    pub alpha_phi: f64,
    pub newton_iters: usize,
    pub mcem_samples: usize,
}

impl Default for MleSettings {
    fn default() -> Self {
        let c = MleConfig::default();
        Self {
            max_cycles: c.max_cycles,
            tol: c.tol,
            alpha_gamma: c.alpha_gamma,
            alpha_phi: c.alpha_phi,
            newton_iters: c.newton_iters,
            mcem_samples: c.mcem_samples,
        }
    }
}

impl MleSettings {
    pub fn to_config(&self, seed: u64) -> MleConfig {
        MleConfig {
            max_cycles: self.max_cycles,
            tol: self.tol,
            alpha_gamma: self.alpha_gamma,
            alpha_phi: self.alpha_phi,
            newton_iters: self.newton_iters,
            mcem_samples: self.mcem_samples,
            seed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NamedScenario {
    pub name: String,
    #[serde(flatten)]
    pub config: ScenarioConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExternalResults {
    /// Label for the report.
    pub name: String,
    /// CSV with columns `replicate,kappa_R,rho_R`.
    pub path: PathBuf,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSettings {
    pub scenarios: Vec<NamedScenario>,
    /// Built-in method names (`pama_b`, `pama_f`, `pama_hb`, `pama_hf`,
    /// `moment`).
    pub methods: Vec<String>,
    #[serde(default)]
    pub external: Vec<ExternalResults>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub mode: Mode,
    #[serde(default)]
    pub model: ModelChoice,
    #[serde(default)]
    pub n1: Option<usize>,
    #[serde(default)]
    pub rankings: Option<PathBuf>,
    #[serde(default)]
    pub covariates: Option<PathBuf>,
    /// Standardize covariate columns to zero mean, unit variance.
    #[serde(default = "default_true")]
    pub standardize_covariates: bool,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub partial: PartialPolicy,
    /// Also write the thinned posterior samples table.
    #[serde(default)]
    pub write_samples: bool,
    #[serde(default)]
    pub chain: ChainSettings,
    #[serde(default)]
    pub mle: MleSettings,
    #[serde(default)]
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkSettings>,
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("config {}: {e}", path.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::validation(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn require_n1(&self) -> anyhow::Result<usize> {
        self.n1
            .filter(|&n1| n1 >= 1)
            .ok_or_else(|| CliError::validation("config requires n1 >= 1"))
    }

    pub fn require_rankings(&self) -> anyhow::Result<&Path> {
        self.rankings
            .as_deref()
            .ok_or_else(|| CliError::validation("config requires a `rankings` path"))
    }

    pub fn output_dir(&self, cli_out: Option<&Path>) -> PathBuf {
        cli_out
            .map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_fit_config_parses() {
        let json = r#"{
            "schema_version": 1,
            "mode": "fit-bayes",
            "n1": 3,
            "rankings": "data.csv",
            "seed": 9
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.mode, Mode::FitBayes);
        assert_eq!(cfg.model, ModelChoice::Pama);
        assert_eq!(cfg.chain.iterations, 10_000);
        assert!(cfg.standardize_covariates);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let json = r#"{"schema_version":1,"mode":"check","typo_field":1}"#;
        assert!(serde_json::from_str::<RunConfig>(json).is_err());
    }

    #[test]
    fn scenario_configs_embed() {
        let json = r#"{
            "schema_version": 1,
            "mode": "simulate",
            "scenario": {"family":"s_pm","a":2.5,"phi":0.6,"n":20,"m":10,"n1":5,"replicate_count":2,"seed":3}
        }"#;
        let cfg: RunConfig = serde_json::from_str(json).unwrap();
        let sc = cfg.scenario.unwrap();
        assert_eq!(sc.n, 20);
        assert_eq!(sc.replicate_count, 2);
    }
}
