//! Command-line frontend: dataset dumps, single runs, experiment grids and
//! the success-count report.

pub mod config;
pub mod experiment;
pub mod report;

use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use odesr::fitness::ConfigurationId;
use odesr::problems::{self, Instance, LoadError, ProblemError};

use config::ExperimentConfig;

/// Exit codes: 0 success, 1 configuration errors, 2 missing data files.
pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_MISSING_DATA: u8 = 2;

#[derive(Parser)]
#[command(
    name = "odesr",
    about = "Identification of ODE systems from observed trajectories",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the benchmark instances.
    Instances,
    /// Dump an instance's dataset (generated or loaded+resampled).
    Generate {
        /// Instance name, e.g. ChemicalReaction.
        instance: String,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory holding the captured data files (default: $ODESR_DATA_DIR).
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
    /// Execute a single run and print the result and the best model.
    Run {
        #[arg(long)]
        instance: String,
        /// Algorithm configuration: D, I, D+I, D_opt, I_opt or I_opt+D_opt.
        #[arg(long, default_value = "I_opt+D_opt")]
        config: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        population_size: Option<usize>,
        #[arg(long)]
        max_generations: Option<usize>,
        #[arg(long)]
        max_evaluations: Option<u64>,
        /// Disable the early stop at the success threshold.
        #[arg(long)]
        no_target_stop: bool,
    },
    /// Execute a full (instance x configuration x seed) grid from a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate results into the success-count table and verify stored
    /// success flags by recomputing the deviation measure from the models.
    Report {
        #[arg(long = "in")]
        results_dir: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

fn data_dir_or_env(cli_value: Option<PathBuf>) -> Option<PathBuf> {
    cli_value.or_else(|| std::env::var_os("ODESR_DATA_DIR").map(PathBuf::from))
}

fn is_missing_data(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        matches!(cause.downcast_ref::<LoadError>(), Some(LoadError::MissingFile(_)))
            || matches!(cause.downcast_ref::<ProblemError>(), Some(ProblemError::NotFileBacked(_)))
            || matches!(
                cause.downcast_ref::<ProblemError>(),
                Some(ProblemError::Load(LoadError::MissingFile(_)))
            )
    })
}

pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are not errors.
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_missing_data(&e) {
                EXIT_MISSING_DATA
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Instances => {
            for inst in Instance::ALL {
                let spec = inst.spec();
                let kind = if inst.is_simulated() { "simulated" } else { "data file" };
                println!(
                    "{:<24} D={} ({}) [{}]",
                    spec.name,
                    spec.dimension(),
                    spec.variable_names.join(", "),
                    kind
                );
            }
            Ok(EXIT_OK)
        }
        Command::Generate { instance, out, data_dir } => {
            let inst = Instance::from_name(&instance)?;
            let dataset = problems::dataset_for(inst, data_dir_or_env(data_dir).as_deref())
                .with_context(|| format!("loading dataset for {instance}"))?;
            let dump = problems::dump_dataset(&dataset, inst.name());
            match out {
                Some(path) => std::fs::write(&path, dump)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{dump}"),
            }
            Ok(EXIT_OK)
        }
        Command::Run {
            instance,
            config,
            seed,
            data_dir,
            population_size,
            max_generations,
            max_evaluations,
            no_target_stop,
        } => {
            let inst = Instance::from_name(&instance)?;
            let configuration = ConfigurationId::from_name(&config)
                .ok_or_else(|| anyhow!("unknown configuration '{config}'"))?;
            let mut exp = ExperimentConfig { target_stop: !no_target_stop, ..Default::default() };
            if let Some(p) = population_size {
                exp.population_size = p;
            }
            if let Some(g) = max_generations {
                exp.group1.max_generations = g;
                exp.group2.max_generations = g;
            }
            if let Some(e) = max_evaluations {
                exp.group1.max_evaluated_solutions = e;
                exp.group2.max_evaluated_solutions = e;
            }
            let dataset = problems::dataset_for(inst, data_dir_or_env(data_dir).as_deref())
                .with_context(|| format!("loading dataset for {instance}"))?;
            let (cell, model_text) =
                experiment::run_cell(inst, configuration, seed, &dataset, &exp, String::new());
            println!("instance: {}", cell.instance);
            println!("configuration: {}", cell.configuration);
            println!("seed: {}", cell.seed);
            println!("generations: {}", cell.generations);
            println!("evaluated_solutions: {}", cell.evaluations);
            println!("lm_residual_evaluations: {}", cell.lm_evaluations);
            println!("snmse: {:e}", cell.snmse);
            println!("success: {}", cell.success);
            println!("model:");
            print!("{model_text}");
            Ok(EXIT_OK)
        }
        Command::Experiment { config } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut exp = ExperimentConfig::parse(&text)?;
            if exp.data_dir.is_none() {
                exp.data_dir = std::env::var_os("ODESR_DATA_DIR").map(PathBuf::from);
            }
            let outcome = experiment::run_experiment(&exp)?;
            println!(
                "completed {} cells ({} already present)",
                outcome.completed.len(),
                outcome.skipped_existing
            );
            for (inst, reason) in &outcome.unavailable_instances {
                eprintln!("skipped {}: {reason}", inst.name());
            }
            Ok(EXIT_OK)
        }
        Command::Report { results_dir, data_dir } => {
            let (report, cells) = report::report_dir(&results_dir, data_dir_or_env(data_dir).as_deref())?;
            print!("{}", report.table);
            println!();
            println!("cells: {cells}, verified: {}", report.verified);
            for u in &report.unverifiable {
                eprintln!("unverifiable: {u}");
            }
            if !report.mismatches.is_empty() {
                for m in &report.mismatches {
                    eprintln!("MISMATCH: {m}");
                }
                anyhow::bail!("{} success flags disagree with recomputed SNMSE", report.mismatches.len());
            }
            Ok(EXIT_OK)
        }
    }
}
