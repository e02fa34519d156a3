//! Grid execution: every (instance, configuration, seed) cell is an
//! independent job; results append to one CSV and each best model goes to a
//! text file. Completed cells are skipped on re-runs, so interrupted
//! experiments resume for free.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use anyhow::{Context, Result};
use odesr::evo::{self, GpConfig};
use odesr::expr::{serialize_with_names, Grammar};
use odesr::fitness::{
    ivp_snmse, ConfigurationId, FitContext, FitnessConfig, FitnessMode, TrajectoryDataset,
};
use odesr::odeint::IvpControls;
use odesr::problems::{dataset_for, Instance};
use rayon::prelude::*;

use crate::config::ExperimentConfig;

/// A run is successful when the integrated system's SNMSE is below this.
pub const SUCCESS_SNMSE: f64 = 0.01;

pub const RESULTS_FILE: &str = "results.csv";
pub const CSV_HEADER: &str =
    "instance,configuration,seed,snmse,success,evaluations,lm_evaluations,generations,wall_seconds,model_file";

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub instance: String,
    pub configuration: String,
    pub seed: u64,
    pub snmse: f64,
    pub success: bool,
    pub evaluations: u64,
    pub lm_evaluations: u64,
    pub generations: usize,
    pub wall_seconds: f64,
    pub model_file: String,
}

impl CellResult {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.17e},{},{},{},{},{:.3},{}",
            self.instance,
            self.configuration,
            self.seed,
            self.snmse,
            self.success,
            self.evaluations,
            self.lm_evaluations,
            self.generations,
            self.wall_seconds,
            self.model_file
        )
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 10 {
            anyhow::bail!("expected 10 CSV fields, found {} in '{row}'", fields.len());
        }
        Ok(CellResult {
            instance: fields[0].to_string(),
            configuration: fields[1].to_string(),
            seed: fields[2].parse().context("seed")?,
            snmse: fields[3].parse().context("snmse")?,
            success: fields[4].parse().context("success")?,
            evaluations: fields[5].parse().context("evaluations")?,
            lm_evaluations: fields[6].parse().context("lm_evaluations")?,
            generations: fields[7].parse().context("generations")?,
            wall_seconds: fields[8].parse().context("wall_seconds")?,
            model_file: fields[9].to_string(),
        })
    }
}

pub fn read_results_csv(path: &Path) -> Result<Vec<CellResult>> {
    let mut results = Vec::new();
    if !path.exists() {
        return Ok(results);
    }
    let content = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    for (idx, line) in content.lines().enumerate() {
        if idx == 0 && line == CSV_HEADER {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        results.push(CellResult::from_csv_row(line).with_context(|| format!("line {}", idx + 1))?);
    }
    Ok(results)
}

/// Builds the per-run search configuration. The early target stop is only
/// enabled for objectives that bound the success measure (modes where the
/// fitness is, or dominates, the integrated SNMSE).
pub fn gp_config_for(
    configuration: ConfigurationId,
    dimension: usize,
    config: &ExperimentConfig,
    seed: u64,
) -> GpConfig {
    let budget = config.budget_for(configuration);
    let mut gp = GpConfig::new(Grammar::standard(dimension), seed);
    gp.population_size = config.population_size;
    gp.max_generations = budget.max_generations;
    gp.max_evaluated_solutions = budget.max_evaluated_solutions;
    let fitness_bounds_success = !matches!(configuration.fitness_config().mode, FitnessMode::Derivative);
    gp.target_fitness = (config.target_stop && fitness_bounds_success).then_some(SUCCESS_SNMSE);
    gp
}

/// Runs one cell to completion and scores the best model with the canonical
/// integrated-SNMSE measure (independent of the fitness mode that drove the
/// search).
pub fn run_cell(
    instance: Instance,
    configuration: ConfigurationId,
    seed: u64,
    dataset: &TrajectoryDataset,
    config: &ExperimentConfig,
    model_file: String,
) -> (CellResult, String) {
    let started = Instant::now();
    let mut fitness_config = configuration.fitness_config();
    fitness_config.controls = IvpControls { max_steps: config.max_integration_steps, ..IvpControls::default() };
    let ctx = FitContext::new(dataset.clone(), fitness_config);
    let gp = gp_config_for(configuration, dataset.dimension(), config, seed);
    let result = evo::run(&gp, &ctx);

    // The reported measure is always evaluated under the default integration
    // controls, independent of the search's step cap, so `report` can verify
    // the stored flags by recomputing the exact same quantity.
    let eval_ctx = FitContext::new(dataset.clone(), FitnessConfig::default());
    let snmse = ivp_snmse(&result.best.model, result.best.model.theta(), &eval_ctx);
    let model_text = serialize_with_names(&result.best.model, dataset.variable_names());
    let wall = if config.deterministic { 0.0 } else { started.elapsed().as_secs_f64() };
    let cell = CellResult {
        instance: instance.name().to_string(),
        configuration: configuration.name().to_string(),
        seed,
        snmse,
        success: snmse < SUCCESS_SNMSE,
        evaluations: result.evaluated_solutions,
        lm_evaluations: result.lm_residual_evaluations,
        generations: result.generations,
        wall_seconds: wall,
        model_file,
    };
    (cell, model_text)
}

pub struct ExperimentOutcome {
    pub completed: Vec<CellResult>,
    pub skipped_existing: usize,
    pub unavailable_instances: Vec<(Instance, String)>,
}

/// Records the effective run settings next to the results.
fn write_metadata(config: &ExperimentConfig) -> Result<()> {
    let controls = IvpControls::default();
    let text = format!(
        "population_size = {}\n\
         runs_per_cell = {}\n\
         base_seed = {}\n\
         target_stop = {}\n\
         max_integration_steps = {}\n\
         rtol = {:e}\n\
         atol = {:e}\n\
         success_snmse = {SUCCESS_SNMSE}\n\
         group1 = {} generations / {} evaluated solutions\n\
         group2 = {} generations / {} evaluated solutions\n",
        config.population_size,
        config.runs_per_cell,
        config.base_seed,
        config.target_stop,
        config.max_integration_steps,
        controls.rtol,
        controls.atol,
        config.group1.max_generations,
        config.group1.max_evaluated_solutions,
        config.group2.max_generations,
        config.group2.max_evaluated_solutions,
    );
    fs::write(config.output_dir.join("metadata.txt"), text).context("writing metadata")
}

/// Executes the full grid. Cell seeds are `base_seed + cell_index` with the
/// cell index enumerating (instance, configuration, run) in declaration
/// order, so a grid is reproducible regardless of scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    fs::create_dir_all(config.output_dir.join("models")).context("creating models dir")?;
    write_metadata(config)?;
    let csv_path = config.output_dir.join(RESULTS_FILE);
    let existing = read_results_csv(&csv_path)?;
    let done: BTreeSet<(String, String, u64)> = existing
        .iter()
        .map(|c| (c.instance.clone(), c.configuration.clone(), c.seed))
        .collect();

    // Load every dataset once; file-backed instances without their data file
    // are skipped and reported rather than failing the grid.
    let mut datasets: HashMap<Instance, Arc<TrajectoryDataset>> = HashMap::new();
    let mut unavailable = Vec::new();
    for &instance in &config.instances {
        match dataset_for(instance, config.data_dir.as_deref()) {
            Ok(ds) => {
                datasets.insert(instance, Arc::new(ds));
            }
            Err(e) => unavailable.push((instance, e.to_string())),
        }
    }

    struct Job {
        instance: Instance,
        configuration: ConfigurationId,
        seed: u64,
        dataset: Arc<TrajectoryDataset>,
        model_file: String,
    }
    let mut jobs = Vec::new();
    let mut skipped_existing = 0usize;
    let mut cell_index = 0u64;
    for &instance in &config.instances {
        for &configuration in &config.configurations {
            for _run in 0..config.runs_per_cell {
                let seed = config.base_seed + cell_index;
                cell_index += 1;
                let Some(dataset) = datasets.get(&instance) else {
                    continue;
                };
                if done.contains(&(instance.name().to_string(), configuration.name().to_string(), seed)) {
                    skipped_existing += 1;
                    continue;
                }
                jobs.push(Job {
                    instance,
                    configuration,
                    seed,
                    dataset: Arc::clone(dataset),
                    model_file: format!(
                        "models/{}__{}__seed{}.txt",
                        instance.name(),
                        configuration.name(),
                        seed
                    ),
                });
            }
        }
    }

    let file = fs::OpenOptions::new().create(true).append(true).open(&csv_path)?;
    let needs_header = existing.is_empty() && file.metadata()?.len() == 0;
    let writer = Mutex::new(file);
    if needs_header {
        writeln!(writer.lock().unwrap(), "{CSV_HEADER}")?;
    }

    let execute = |job: &Job| -> Result<CellResult> {
        let (cell, model_text) =
            run_cell(job.instance, job.configuration, job.seed, &job.dataset, config, job.model_file.clone());
        fs::write(config.output_dir.join(&job.model_file), model_text)?;
        let mut w = writer.lock().unwrap();
        writeln!(w, "{}", cell.to_csv_row())?;
        w.flush()?;
        Ok(cell)
    };

    let completed: Vec<CellResult> = if config.deterministic || config.parallelism <= 1 {
        jobs.iter().map(&execute).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(config.parallelism).build()?;
        pool.install(|| jobs.par_iter().map(&execute).collect::<Result<_>>())?
    };

    Ok(ExperimentOutcome { completed, skipped_existing, unavailable_instances: unavailable })
}
