//! Experiment configuration: a flat key = value file with one section per
//! configuration group, for example
//!
//! ```text
//! instances = ChemicalReaction,Glider
//! configurations = I_opt+D_opt,I_opt
//! runs_per_cell = 10
//! base_seed = 0
//! output_dir = results
//! parallelism = 2
//!
//! [group1]
//! max_generations = 250
//! max_evaluated_solutions = 500000
//!
//! [group2]
//! max_generations = 25
//! max_evaluated_solutions = 100000
//! ```

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use odesr::fitness::ConfigurationId;
use odesr::problems::Instance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupBudget {
    pub max_generations: usize,
    pub max_evaluated_solutions: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub instances: Vec<Instance>,
    pub configurations: Vec<ConfigurationId>,
    pub runs_per_cell: usize,
    pub base_seed: u64,
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    /// Sequential execution with zeroed wall times: identical configs yield
    /// byte-identical result files.
    pub deterministic: bool,
    /// Stop runs early once the best fitness crosses the success threshold
    /// (only wired up for objectives that bound the success measure).
    pub target_stop: bool,
    pub population_size: usize,
    /// Internal step budget per trajectory during candidate evaluation.
    /// Candidates that exhaust it are treated as stiff/divergent and get the
    /// penalty fitness; recorded in run metadata.
    pub max_integration_steps: usize,
    /// Budgets without parameter optimization (configurations D, I, D+I).
    pub group1: GroupBudget,
    /// Budgets with parameter optimization (D_opt, I_opt, I_opt+D_opt).
    pub group2: GroupBudget,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            instances: Instance::ALL.to_vec(),
            configurations: ConfigurationId::ALL.to_vec(),
            runs_per_cell: 10,
            base_seed: 0,
            data_dir: None,
            output_dir: PathBuf::from("results"),
            parallelism: 1,
            deterministic: false,
            target_stop: true,
            population_size: 300,
            max_integration_steps: 2_000,
            group1: GroupBudget { max_generations: 250, max_evaluated_solutions: 500_000 },
            group2: GroupBudget { max_generations: 25, max_evaluated_solutions: 100_000 },
        }
    }
}

impl ExperimentConfig {
    pub fn budget_for(&self, configuration: ConfigurationId) -> GroupBudget {
        if configuration.uses_parameter_optimization() {
            self.group2
        } else {
            self.group1
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if section != "group1" && section != "group2" {
                    bail!("line {line_no}: unknown section [{section}]");
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected 'key = value', got '{line}'"))?;
            let key = key.trim();
            let value = value.trim();
            let ctx = |k: &str| format!("line {line_no}: invalid value for '{k}'");

            match (section.as_str(), key) {
                ("", "instances") => {
                    config.instances = if value == "all" {
                        Instance::ALL.to_vec()
                    } else if value == "simulated" {
                        Instance::simulated().collect()
                    } else {
                        value
                            .split(',')
                            .map(|n| Instance::from_name(n.trim()).map_err(|e| anyhow!("line {line_no}: {e}")))
                            .collect::<Result<Vec<_>>>()?
                    };
                }
                ("", "configurations") => {
                    config.configurations = if value == "all" {
                        ConfigurationId::ALL.to_vec()
                    } else {
                        value
                            .split(',')
                            .map(|n| {
                                ConfigurationId::from_name(n.trim()).ok_or_else(|| {
                                    anyhow!("line {line_no}: unknown configuration '{}'", n.trim())
                                })
                            })
                            .collect::<Result<Vec<_>>>()?
                    };
                }
                ("", "runs_per_cell") => config.runs_per_cell = value.parse().with_context(|| ctx(key))?,
                ("", "base_seed") => config.base_seed = value.parse().with_context(|| ctx(key))?,
                ("", "data_dir") => config.data_dir = Some(PathBuf::from(value)),
                ("", "output_dir") => config.output_dir = PathBuf::from(value),
                ("", "parallelism") => config.parallelism = value.parse().with_context(|| ctx(key))?,
                ("", "deterministic") => config.deterministic = value.parse().with_context(|| ctx(key))?,
                ("", "target_stop") => config.target_stop = value.parse().with_context(|| ctx(key))?,
                ("", "population_size") => {
                    config.population_size = value.parse().with_context(|| ctx(key))?
                }
                ("", "max_integration_steps") => {
                    config.max_integration_steps = value.parse().with_context(|| ctx(key))?
                }
                ("group1", "max_generations") => {
                    config.group1.max_generations = value.parse().with_context(|| ctx(key))?
                }
                ("group1", "max_evaluated_solutions") => {
                    config.group1.max_evaluated_solutions = value.parse().with_context(|| ctx(key))?
                }
                ("group2", "max_generations") => {
                    config.group2.max_generations = value.parse().with_context(|| ctx(key))?
                }
                ("group2", "max_evaluated_solutions") => {
                    config.group2.max_evaluated_solutions = value.parse().with_context(|| ctx(key))?
                }
                _ => bail!("line {line_no}: unknown key '{key}' in section '[{section}]'"),
            }
        }
        if config.runs_per_cell == 0 {
            bail!("runs_per_cell must be at least 1");
        }
        if config.instances.is_empty() {
            bail!("no instances selected");
        }
        if config.configurations.is_empty() {
            bail!("no configurations selected");
        }
        Ok(config)
    }
}
