//! Aggregation of cell results into the success-count table, plus the
//! verification pass that recomputes the deviation measure from every
//! persisted model and checks it against the stored success flag.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use odesr::expr::deserialize;
use odesr::fitness::{ivp_snmse, ConfigurationId, FitContext, FitnessConfig};
use odesr::problems::{dataset_for, Instance};

use crate::experiment::{read_results_csv, CellResult, RESULTS_FILE, SUCCESS_SNMSE};

pub struct Report {
    pub table: String,
    pub verified: usize,
    pub mismatches: Vec<String>,
    pub unverifiable: Vec<String>,
}

/// Success counts per (instance, configuration) with a trailing Total row.
pub fn success_table(results: &[CellResult]) -> String {
    let mut counts: HashMap<(String, String), usize> = HashMap::new();
    for cell in results {
        let e = counts.entry((cell.instance.clone(), cell.configuration.clone())).or_insert(0);
        if cell.success {
            *e += 1;
        }
    }

    let configurations: Vec<&ConfigurationId> = ConfigurationId::ALL
        .iter()
        .filter(|c| results.iter().any(|r| r.configuration == c.name()))
        .collect();
    let instances: Vec<&'static str> = Instance::ALL
        .iter()
        .map(|i| i.name())
        .filter(|n| results.iter().any(|r| r.instance == *n))
        .collect();

    let mut out = String::new();
    let _ = write!(out, "{:<24}", "Instance");
    for c in &configurations {
        let _ = write!(out, " {:>12}", c.name());
    }
    out.push('\n');
    let mut totals = vec![0usize; configurations.len()];
    for inst in &instances {
        let _ = write!(out, "{inst:<24}");
        for (k, c) in configurations.iter().enumerate() {
            let n = counts.get(&(inst.to_string(), c.name().to_string())).copied().unwrap_or(0);
            totals[k] += n;
            let _ = write!(out, " {n:>12}");
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<24}", "Total");
    for t in &totals {
        let _ = write!(out, " {t:>12}");
    }
    out.push('\n');
    out
}

/// Recomputes the integrated SNMSE of every persisted model on its
/// instance's dataset and compares the success flag against the stored one.
/// Instances whose dataset cannot be rebuilt (missing data files) are
/// reported as unverifiable rather than failing.
pub fn verify_results(results: &[CellResult], results_dir: &Path, data_dir: Option<&Path>) -> Report {
    let mut contexts: HashMap<String, Option<FitContext>> = HashMap::new();
    let mut verified = 0usize;
    let mut mismatches = Vec::new();
    let mut unverifiable = Vec::new();

    for cell in results {
        let ctx_slot = contexts.entry(cell.instance.clone()).or_insert_with(|| {
            Instance::from_name(&cell.instance)
                .ok()
                .and_then(|inst| dataset_for(inst, data_dir).ok())
                .map(|ds| FitContext::new(ds, FitnessConfig::default()))
        });
        let Some(ctx) = ctx_slot else {
            unverifiable.push(format!("{}: dataset unavailable", cell.instance));
            continue;
        };
        let model_path = results_dir.join(&cell.model_file);
        let outcome = std::fs::read_to_string(&model_path)
            .map_err(|e| format!("{}: {e}", model_path.display()))
            .and_then(|text| deserialize(&text).map_err(|e| format!("{}: {e}", model_path.display())));
        match outcome {
            Ok(model) => {
                let snmse = ivp_snmse(&model, model.theta(), ctx);
                let recomputed_success = snmse < SUCCESS_SNMSE;
                if recomputed_success == cell.success {
                    verified += 1;
                } else {
                    mismatches.push(format!(
                        "{} {} seed {}: stored success={} but recomputed SNMSE {:.6e}",
                        cell.instance, cell.configuration, cell.seed, cell.success, snmse
                    ));
                }
            }
            Err(e) => unverifiable.push(e),
        }
    }

    Report { table: success_table(results), verified, mismatches, unverifiable }
}

pub fn report_dir(results_dir: &Path, data_dir: Option<&Path>) -> Result<(Report, usize)> {
    let csv = results_dir.join(RESULTS_FILE);
    let results = read_results_csv(&csv).with_context(|| format!("reading {}", csv.display()))?;
    anyhow::ensure!(!results.is_empty(), "no results found in {}", csv.display());
    let report = verify_results(&results, results_dir, data_dir);
    Ok((report, results.len()))
}
