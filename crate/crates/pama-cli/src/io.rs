//! CSV formats: ranking tables, covariate tables, posterior sample tables,
//! and benchmark reports.
//!
//! Ranking CSV: a header row of entity names, one row per ranker, each cell
//! the 1-based rank of that entity or empty when the ranker did not rank it.
//! Quoting follows RFC 4180 (quotes only where needed); floats use the
//! shortest round-trip representation.

use std::path::Path;

use anyhow::Context;
use pama_core::rank::{PartialRanking, Ranking};
use pama_core::simulate::{EvalReport, EvalRow};

use crate::CliError;

/// Rankings parsed from one CSV file.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedRankings {
    Full(Vec<Ranking>),
    Partial(Vec<PartialRanking>),
}

impl LoadedRankings {
    pub fn len(&self) -> usize {
        match self {
            LoadedRankings::Full(v) => v.len(),
            LoadedRankings::Partial(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Read a ranking table; returns the entity names (header order) and the
/// lists. Lists are full when every cell is filled, partial otherwise.
pub fn load_rankings(path: &Path) -> anyhow::Result<(Vec<String>, LoadedRankings)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open rankings {}", path.display()))?;
    let names: Vec<String> = reader
        .headers()
        .context("rankings file has no header")?
        .iter()
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        return Err(CliError::validation("rankings header names no entities"));
    }
    let n = names.len();

    let mut rows: Vec<Vec<Option<u32>>> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            CliError::validation(format!("rankings row {}: {e}", idx + 2))
        })?;
        let mut row = Vec::with_capacity(n);
        for (col, cell) in record.iter().enumerate() {
            if cell.is_empty() {
                row.push(None);
            } else {
                let rank: u32 = cell.parse().map_err(|_| {
                    CliError::validation(format!(
                        "rankings row {} column `{}`: `{cell}` is not a positive integer",
                        idx + 2,
                        names[col]
                    ))
                })?;
                row.push(Some(rank));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::validation("rankings file contains no rows"));
    }

    let any_missing = rows.iter().any(|r| r.iter().any(Option::is_none));
    if any_missing {
        let lists = rows
            .iter()
            .enumerate()
            .map(|(idx, row)| {
                PartialRanking::from_ranks(row.clone()).map_err(|e| {
                    CliError::validation(format!("rankings row {}: {e}", idx + 2))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((names, LoadedRankings::Partial(lists)))
    } else {
        let lists = rows
            .iter()
            .enumerate()
            .map(|(idx, row)| {
                Ranking::from_positions(row.iter().map(|c| c.unwrap()).collect()).map_err(|e| {
                    CliError::validation(format!("rankings row {}: {e}", idx + 2))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((names, LoadedRankings::Full(lists)))
    }
}

/// Write a ranking table (the inverse of [`load_rankings`]).
pub fn write_rankings(
    path: &Path,
    names: &[String],
    lists: &LoadedRankings,
) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write rankings {}", path.display()))?;
    writer.write_record(names)?;
    match lists {
        LoadedRankings::Full(rankings) => {
            for r in rankings {
                writer.write_record(r.positions().iter().map(|p| p.to_string()))?;
            }
        }
        LoadedRankings::Partial(partials) => {
            for p in partials {
                writer.write_record(
                    p.ranks()
                        .iter()
                        .map(|c| c.map(|r| r.to_string()).unwrap_or_default()),
                )?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

/// Read a covariate table: first column `entity`, remaining columns named
/// covariates. Rows must cover exactly the ranking entities. Columns are
/// standardized to zero mean and unit variance unless disabled.
pub fn load_covariates(
    path: &Path,
    entities: &[String],
    standardize: bool,
) -> anyhow::Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open covariates {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .context("covariates file has no header")?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 2 {
        return Err(CliError::validation(
            "covariates file needs an entity column plus at least one covariate",
        ));
    }
    let col_names: Vec<String> = header[1..].to_vec();
    let p = col_names.len();

    let mut by_entity = std::collections::HashMap::new();
    for (idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::validation(format!("covariates row {}: {e}", idx + 2)))?;
        let entity = record[0].to_string();
        let mut row = Vec::with_capacity(p);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let value: f64 = cell.parse().map_err(|_| {
                CliError::validation(format!(
                    "covariates row {} column `{}`: `{cell}` is not numeric",
                    idx + 2,
                    col_names[j]
                ))
            })?;
            row.push(value);
        }
        if by_entity.insert(entity.clone(), row).is_some() {
            return Err(CliError::validation(format!(
                "covariates list entity `{entity}` twice"
            )));
        }
    }

    let mut x = Vec::with_capacity(entities.len());
    for name in entities {
        let row = by_entity.remove(name).ok_or_else(|| {
            CliError::validation(format!("covariates are missing entity `{name}`"))
        })?;
        x.push(row);
    }

    if standardize {
        let n = x.len() as f64;
        for j in 0..p {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = x.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / n;
            if var < 1e-12 {
                return Err(CliError::validation(format!(
                    "covariate column `{}` is constant; disable standardization or drop it",
                    col_names[j]
                )));
            }
            let sd = var.sqrt();
            for row in &mut x {
                row[j] = (row[j] - mean) / sd;
            }
        }
    }
    Ok((col_names, x))
}

/// Posterior sample table: one row per recorded state with columns
/// `iteration, phi, gamma_1..gamma_m, ind, log_post`; `ind` is the
/// comma-joined label vector (quoted by the writer as needed).
pub fn write_samples(
    path: &Path,
    states: &[pama_core::bayes::ChainState],
    burn_in: usize,
    thin: usize,
) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write samples {}", path.display()))?;
    let m = states.first().map_or(0, |s| s.params.gamma.len());
    let mut header = vec!["iteration".to_string(), "phi".to_string()];
    header.extend((1..=m).map(|k| format!("gamma_{k}")));
    header.push("ind".into());
    header.push("log_post".into());
    writer.write_record(&header)?;
    for (i, state) in states.iter().enumerate() {
        let mut record = vec![(burn_in + i * thin).to_string(), state.params.phi.to_string()];
        record.extend(state.params.gamma.iter().map(|g| g.to_string()));
        record.push(
            state
                .params
                .ind
                .labels()
                .iter()
                .map(|l| l.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        record.push(state.log_post.to_string());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// One value per sweep (log-posterior trace).
pub fn write_trace(path: &Path, trace: &[f64]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write trace {}", path.display()))?;
    writer.write_record(["sweep", "log_post"])?;
    for (i, v) in trace.iter().enumerate() {
        writer.write_record([i.to_string(), v.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-replicate benchmark rows.
pub fn write_benchmark_rows(path: &Path, rows: &[EvalRow]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write report {}", path.display()))?;
    writer.write_record([
        "scenario",
        "n",
        "m",
        "n1",
        "method",
        "replicate",
        "kappa_R",
        "rho_R",
    ])?;
    for row in rows {
        writer.write_record([
            row.scenario.clone(),
            row.n.to_string(),
            row.m.to_string(),
            row.n1.to_string(),
            row.method.clone(),
            row.replicate.to_string(),
            row.kappa.to_string(),
            row.rho.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Aggregate benchmark table.
pub fn write_benchmark_summary(path: &Path, report: &EvalReport) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write summary {}", path.display()))?;
    writer.write_record([
        "scenario",
        "method",
        "replicates",
        "mean_kappa_R",
        "sd_kappa_R",
        "mean_rho_R",
        "sd_rho_R",
    ])?;
    for s in &report.summary {
        writer.write_record([
            s.scenario.clone(),
            s.method.clone(),
            s.replicates.to_string(),
            s.mean_kappa.to_string(),
            s.sd_kappa.to_string(),
            s.mean_rho.to_string(),
            s.sd_rho.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// External per-replicate results: CSV with columns `replicate,kappa_R,rho_R`.
pub fn load_external_results(
    path: &Path,
) -> anyhow::Result<std::collections::BTreeMap<usize, (f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open external results {}", path.display()))?;
    let mut rows = std::collections::BTreeMap::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record
            .map_err(|e| CliError::validation(format!("external row {}: {e}", idx + 2)))?;
        let parse = |field: usize, what: &str| -> anyhow::Result<f64> {
            record
                .get(field)
                .ok_or_else(|| {
                    CliError::validation(format!("external row {}: missing {what}", idx + 2))
                })?
                .parse()
                .map_err(|_| {
                    CliError::validation(format!("external row {}: bad {what}", idx + 2))
                })
        };
        let replicate = parse(0, "replicate")? as usize;
        rows.insert(replicate, (parse(1, "kappa_R")?, parse(2, "rho_R")?));
    }
    Ok(rows)
}
