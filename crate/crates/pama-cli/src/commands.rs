//! The four workflows behind the binary: fit, simulate, benchmark, check.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use pama_core::bayes::{self, ChainRun, ModelKind};
use pama_core::mle;
use pama_core::partial;
use pama_core::rank::PartialRanking;
use pama_core::seeds;
use pama_core::simulate::{self, Method};

use crate::config::{Mode, ModelChoice, PartialPolicy, RunConfig};
use crate::io::{self, LoadedRankings};
use crate::report::{self, Meta, ResultDocument, Results, RESULT_SCHEMA_VERSION};
use crate::{checks, CliError};

pub struct CommonArgs {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub partial: Option<PartialPolicy>,
}

fn apply_policy(
    loaded: LoadedRankings,
    policy: PartialPolicy,
) -> anyhow::Result<LoadedRankings> {
    match (policy, loaded) {
        (PartialPolicy::No, LoadedRankings::Partial(_)) => Err(CliError::validation(
            "rankings contain empty cells but the partial policy is `no`",
        )),
        (PartialPolicy::Yes, LoadedRankings::Full(lists)) => Ok(LoadedRankings::Partial(
            lists.iter().map(PartialRanking::from_full).collect(),
        )),
        (_, loaded) => Ok(loaded),
    }
}

pub fn cmd_fit(cfg: &RunConfig, args: &CommonArgs) -> anyhow::Result<PathBuf> {
    let started = Instant::now();
    let seed = args.seed.unwrap_or(cfg.seed);
    let out_dir = cfg.output_dir(args.out.as_deref());
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    let n1 = cfg.require_n1()?;
    let (entities, loaded) = io::load_rankings(cfg.require_rankings()?)?;
    let loaded = apply_policy(loaded, args.partial.unwrap_or(cfg.partial))?;
    let kind: ModelKind = cfg.model.into();

    let covariates = match (cfg.model, &cfg.covariates) {
        (ModelChoice::Covariate, Some(path)) => {
            Some(io::load_covariates(path, &entities, cfg.standardize_covariates)?)
        }
        (ModelChoice::Covariate, None) => {
            return Err(CliError::validation(
                "covariate model requires a `covariates` path",
            ))
        }
        (_, _) => None,
    };
    let cov_names = covariates.as_ref().map(|(names, _)| names.as_slice());
    let cov_matrix = covariates.as_ref().map(|(_, x)| x.as_slice());

    let n = entities.len();
    let m = loaded.len();
    let is_partial = matches!(loaded, LoadedRankings::Partial(_));

    let results = match cfg.mode {
        Mode::FitBayes => {
            let chain_cfg = cfg.chain.to_config(seed);
            let run: ChainRun = match &loaded {
                LoadedRankings::Full(lists) => {
                    bayes::run_chain(lists, n1, cov_matrix, &chain_cfg, kind)?
                }
                LoadedRankings::Partial(lists) => {
                    partial::run_chain_partial(lists, n1, cov_matrix, &chain_cfg, kind)?
                }
            };
            let summary = bayes::posterior_summary(&run)?;
            let mut payload = report::bayes_results(&summary, &entities, cov_names);
            let trace_path = out_dir.join("log_post.csv");
            io::write_trace(&trace_path, &run.sweep_log_post)?;
            payload.log_post_trace = Some("log_post.csv".into());
            if cfg.write_samples {
                let samples_path = out_dir.join("samples.csv");
                io::write_samples(&samples_path, &run.states, chain_cfg.burn_in, chain_cfg.thin)?;
                payload.samples = Some("samples.csv".into());
            }
            Results::Bayes(payload)
        }
        Mode::FitMle => {
            let mle_cfg = cfg.mle.to_config(seed);
            let fit = match (&loaded, kind) {
                (LoadedRankings::Full(lists), ModelKind::PamaH) => {
                    mle::mcem_fit_pama_h(lists, n1, &mle_cfg)?
                }
                (LoadedRankings::Full(lists), _) => {
                    mle::fit_mle(lists, n1, cov_matrix, &mle_cfg, kind)?
                }
                (LoadedRankings::Partial(lists), _) => {
                    partial::mcem_fit_partial(lists, n1, cov_matrix, &mle_cfg, kind)?
                }
            };
            if !fit.converged {
                eprintln!(
                    "warning: optimization did not converge within {} cycles",
                    mle_cfg.max_cycles
                );
            }
            Results::Mle(report::mle_results(&fit, &entities, cov_names))
        }
        _ => return Err(CliError::validation("cmd_fit requires a fit-* mode")),
    };

    let doc = ResultDocument {
        schema_version: RESULT_SCHEMA_VERSION,
        meta: Meta {
            mode: mode_name(cfg.mode),
            model: model_name(cfg.model),
            seed,
            wall_time_seconds: started.elapsed().as_secs_f64(),
            n,
            m,
            n1,
            partial_lists: is_partial,
            entities,
            config: serde_json::to_value(cfg)?,
        },
        results,
    };
    let path = out_dir.join("result.json");
    std::fs::write(&path, serde_json::to_string_pretty(&doc)?)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn mode_name(mode: Mode) -> String {
    serde_json::to_value(mode)
        .unwrap()
        .as_str()
        .unwrap()
        .to_string()
}

fn model_name(model: ModelChoice) -> String {
    serde_json::to_value(model)
        .unwrap()
        .as_str()
        .unwrap()
        .to_string()
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    schema_version: u32,
    master_seed: u64,
    scenario: pama_core::simulate::ScenarioConfig,
    replicates: Vec<ManifestEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ManifestEntry {
    replicate: usize,
    seed: u64,
    rankings: String,
    truth: String,
}

pub fn cmd_simulate(cfg: &RunConfig, args: &CommonArgs) -> anyhow::Result<PathBuf> {
    let scenario = cfg
        .scenario
        .clone()
        .ok_or_else(|| CliError::validation("simulate mode requires a `scenario` block"))?;
    let mut scenario = scenario;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    scenario.validate()?;
    let out_dir = cfg.output_dir(args.out.as_deref());
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    let names: Vec<String> = (1..=scenario.n).map(|i| format!("E{i}")).collect();
    let mut entries = Vec::new();
    for rep in 0..scenario.replicate_count {
        let (taus, truth) = simulate::generate(&scenario, rep)?;
        let rankings_file = format!("rankings_{rep:04}.csv");
        let truth_file = format!("truth_{rep:04}.json");
        io::write_rankings(
            &out_dir.join(&rankings_file),
            &names,
            &LoadedRankings::Full(taus),
        )?;
        std::fs::write(
            out_dir.join(&truth_file),
            serde_json::to_string_pretty(&truth)?,
        )?;
        entries.push(ManifestEntry {
            replicate: rep,
            seed: seeds::derive_seed(scenario.seed, "ranker", (rep as u64) << 20),
            rankings: rankings_file,
            truth: truth_file,
        });
    }
    // The manifest is written last so its presence marks a complete run.
    let manifest = Manifest {
        schema_version: 1,
        master_seed: scenario.seed,
        scenario,
        replicates: entries,
    };
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

pub fn cmd_benchmark(cfg: &RunConfig, args: &CommonArgs) -> anyhow::Result<PathBuf> {
    let bench = cfg
        .benchmark
        .clone()
        .ok_or_else(|| CliError::validation("benchmark mode requires a `benchmark` block"))?;
    if bench.scenarios.is_empty() {
        return Err(CliError::validation("benchmark lists no scenarios"));
    }
    let out_dir = cfg.output_dir(args.out.as_deref());
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;

    let mut methods = Vec::new();
    for name in &bench.methods {
        methods.push(Method::from_name(name)?);
    }
    for external in &bench.external {
        methods.push(Method::External {
            name: external.name.clone(),
            rows: io::load_external_results(&external.path)?,
        });
    }
    if methods.is_empty() {
        return Err(CliError::validation("benchmark lists no methods"));
    }

    let mut scenarios = Vec::new();
    for named in &bench.scenarios {
        let mut sc = named.config.clone();
        if let Some(seed) = args.seed {
            sc.seed = seed;
        }
        scenarios.push((named.name.clone(), sc));
    }

    let chain_cfg = cfg.chain.to_config(0);
    let mle_cfg = cfg.mle.to_config(0);
    let report = simulate::run_benchmark(&scenarios, &methods, &chain_cfg, &mle_cfg)?;
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    io::write_benchmark_rows(&out_dir.join("replicates.csv"), &report.rows)?;
    let path = out_dir.join("summary.csv");
    io::write_benchmark_summary(&path, &report)?;
    Ok(path)
}

pub fn cmd_check() -> anyhow::Result<bool> {
    let outcomes = checks::run_all();
    let mut all_ok = true;
    for outcome in &outcomes {
        let status = if outcome.passed { "pass" } else { "FAIL" };
        println!(
            "{status}  {:<28} {:>8.2?}  {}",
            outcome.name, outcome.runtime, outcome.detail
        );
        all_ok &= outcome.passed;
    }
    Ok(all_ok)
}
