//! The benchmark problem instances: programmatic generators for the eleven
//! simulated systems and loaders (with cubic-spline resampling) for the
//! eight externally captured trajectory files.
//!
//! Simulated datasets are produced with fine fixed-step RK4 and
//! cross-checked against the adaptive integrator at tight tolerance on every
//! generation, so they are deterministic and self-validating. Ground-truth
//! systems are written in the textual model format and parsed once on
//! demand; every numeric literal becomes a trainable parameter, which is
//! what the recovery tests rely on.

mod spline;

pub use spline::NaturalSpline;

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::expr::{self, OdeSystemModel};
use crate::fitness::{DatasetError, Episode, TrajectoryDataset};
use crate::odeint::{self, GridError, IvpControls, TimeGrid};

/// All 19 problem instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instance {
    ChemicalReaction,
    ECell,
    SSystem,
    LotkaVolterra3,
    LotkaVolterra2,
    Glider,
    BacterialRespiration,
    PredatorPrey,
    BarMagnets,
    ShearFlow,
    VanDerPol,
    LinearOscillatorSim,
    LinearOscillatorReal,
    PendulumSim,
    PendulumReal,
    CoupledOscillatorSim,
    CoupledOscillatorReal,
    DoublePendulumSim,
    DoublePendulumReal,
}

/// Static description of one instance.
#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub name: &'static str,
    pub variable_names: &'static [&'static str],
    pub source: SourceSpec,
}

#[derive(Debug, Clone, Copy)]
pub enum SourceSpec {
    Simulated {
        /// Ground-truth right-hand sides in the textual model format.
        equations: &'static str,
        initial_values: &'static [&'static [f64]],
        n_per_episode: usize,
        t_max: f64,
    },
    DataFile {
        file_name: &'static str,
        /// Equidistant point count after cubic-spline resampling.
        n_resample: usize,
        /// Use only the first contiguous (non-chaotic) segment of the file.
        first_block_only: bool,
    },
}

impl InstanceSpec {
    pub fn dimension(&self) -> usize {
        self.variable_names.len()
    }
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("unknown instance '{0}'")]
    UnknownInstance(String),
    #[error("instance '{0}' is file-backed and cannot be generated")]
    NotSimulated(&'static str),
    #[error("instance '{0}' is simulated and has no data file")]
    NotFileBacked(&'static str),
    #[error("generating '{name}' failed: {reason}")]
    GenerationFailed { name: &'static str, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Load(#[from] LoadError),
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("data file {0} is missing")]
    MissingFile(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: line {line}: non-increasing timestamp")]
    NonIncreasingTime { path: PathBuf, line: usize },
    #[error("{path}: expected {expected} points after selection, found {found} (need at least 4)")]
    TooFewPoints { path: PathBuf, expected: String, found: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl Instance {
    pub const ALL: [Instance; 19] = [
        Instance::ChemicalReaction,
        Instance::ECell,
        Instance::SSystem,
        Instance::LotkaVolterra3,
        Instance::LotkaVolterra2,
        Instance::Glider,
        Instance::BacterialRespiration,
        Instance::PredatorPrey,
        Instance::BarMagnets,
        Instance::ShearFlow,
        Instance::VanDerPol,
        Instance::LinearOscillatorSim,
        Instance::LinearOscillatorReal,
        Instance::PendulumSim,
        Instance::PendulumReal,
        Instance::CoupledOscillatorSim,
        Instance::CoupledOscillatorReal,
        Instance::DoublePendulumSim,
        Instance::DoublePendulumReal,
    ];

    pub fn simulated() -> impl Iterator<Item = Instance> {
        Instance::ALL.iter().copied().filter(|i| i.is_simulated())
    }

    pub fn name(&self) -> &'static str {
        self.spec().name
    }

    pub fn from_name(name: &str) -> Result<Instance, ProblemError> {
        Instance::ALL
            .iter()
            .copied()
            .find(|i| i.name() == name)
            .ok_or_else(|| ProblemError::UnknownInstance(name.to_string()))
    }

    pub fn is_simulated(&self) -> bool {
        matches!(self.spec().source, SourceSpec::Simulated { .. })
    }

    pub fn spec(&self) -> InstanceSpec {
        match self {
            Instance::ChemicalReaction => InstanceSpec {
                name: "ChemicalReaction",
                variable_names: &["y1", "y2", "y3"],
                source: SourceSpec::Simulated {
                    equations: "dy1/dt = -1.4 * y1\n\
                                dy2/dt = 1.4 * y1 - 4.2 * y2\n\
                                dy3/dt = 4.2 * y2\n",
                    initial_values: &[&[0.1, 0.0, 0.0]],
                    n_per_episode: 100,
                    t_max: 1.0,
                },
            },
            Instance::ECell => InstanceSpec {
                name: "ECell",
                variable_names: &["y1", "y2", "y3"],
                source: SourceSpec::Simulated {
                    equations: "dy1/dt = -10 * y1 * y3\n\
                                dy2/dt = 10 * y1 * y3 - 17 * y2\n\
                                dy3/dt = -10 * y1 * y3 + 17 * y2\n",
                    initial_values: &[&[1.2, 0.0, 1.2]],
                    n_per_episode: 40,
                    t_max: 0.4,
                },
            },
            Instance::SSystem => InstanceSpec {
                name: "SSystem",
                variable_names: &["y1", "y2", "y3", "y4", "y5"],
                source: SourceSpec::Simulated {
                    equations: "dy1/dt = 15 * y3 * pow(y5, -0.1) - 10 * pow(y1, 2)\n\
                                dy2/dt = 10 * pow(y1, 2) - 10 * pow(y2, 2)\n\
                                dy3/dt = 10 * pow(y2, -0.1) - 10 * pow(y2, -0.1) * pow(y3, 2)\n\
                                dy4/dt = 8 * pow(y1, 2) * pow(y5, -0.1) - 10 * pow(y4, 2)\n\
                                dy5/dt = 10 * pow(y4, 2) - 10 * pow(y5, 2)\n",
                    initial_values: &[
                        &[0.1, 0.1, 0.1, 0.1, 0.1],
                        &[0.5, 0.5, 0.5, 0.5, 0.5],
                        &[1.5, 1.5, 1.5, 1.5, 1.5],
                    ],
                    n_per_episode: 30,
                    t_max: 0.3,
                },
            },
            Instance::LotkaVolterra3 => InstanceSpec {
                name: "LotkaVolterra3",
                variable_names: &["y1", "y2", "y3"],
                source: SourceSpec::Simulated {
                    equations: "dy1/dt = y1 * (1 - y1 - y2 - 10 * y3)\n\
                                dy2/dt = y2 * (0.992 - 1.5 * y1 - y2 - y3)\n\
                                dy3/dt = y3 * (-1.2 + 5 * y1 + 0.5 * y2)\n",
                    initial_values: &[&[0.2895, 0.2827, 0.126]],
                    n_per_episode: 100,
                    t_max: 100.0,
                },
            },
            Instance::LotkaVolterra2 => InstanceSpec {
                name: "LotkaVolterra2",
                variable_names: &["y1", "y2"],
                source: SourceSpec::Simulated {
                    equations: "dy1/dt = y1 * (0.04 - 0.0005 * y2)\n\
                                dy2/dt = y2 * (0.004 * y1 - 0.2)\n",
                    initial_values: &[&[20.0, 20.0]],
                    n_per_episode: 300,
                    t_max: 300.0,
                },
            },
            Instance::Glider => InstanceSpec {
                name: "Glider",
                variable_names: &["v", "theta"],
                source: SourceSpec::Simulated {
                    equations: "dv/dt = -0.05 * v * v - sin(theta)\n\
                                dtheta/dt = v - cos(theta) / v\n",
                    initial_values: &[&[1.5, 1.0]],
                    n_per_episode: 100,
                    t_max: 10.0,
                },
            },
            Instance::BacterialRespiration => InstanceSpec {
                name: "BacterialRespiration",
                variable_names: &["x", "y"],
                source: SourceSpec::Simulated {
                    equations: "dx/dt = (20 - x - x * y) / (1 + 0.5 * x * x)\n\
                                dy/dt = (10 - x * y) / (1 + 0.5 * x * x)\n",
                    initial_values: &[&[1.0, 1.0]],
                    n_per_episode: 100,
                    t_max: 10.0,
                },
            },
            Instance::PredatorPrey => InstanceSpec {
                name: "PredatorPrey",
                variable_names: &["x", "y"],
                source: SourceSpec::Simulated {
                    equations: "dx/dt = x * (4 - x - y / (1 + x))\n\
                                dy/dt = y * (x / (1 + x) - 0.075 * y)\n",
                    initial_values: &[&[1.1, 7.36]],
                    n_per_episode: 100,
                    t_max: 10.0,
                },
            },
            Instance::BarMagnets => InstanceSpec {
                name: "BarMagnets",
                variable_names: &["theta1", "theta2"],
                source: SourceSpec::Simulated {
                    equations: "dtheta1/dt = 0.5 * sin(theta1 - theta2) - sin(theta1)\n\
                                dtheta2/dt = 0.5 * sin(theta2 - theta1) - sin(theta2)\n",
                    initial_values: &[&[0.7, -0.3]],
                    n_per_episode: 100,
                    t_max: 10.0,
                },
            },
            Instance::ShearFlow => InstanceSpec {
                name: "ShearFlow",
                variable_names: &["theta", "phi"],
                source: SourceSpec::Simulated {
                    equations: "dtheta/dt = cos(theta) / sin(theta) * cos(phi)\n\
                                dphi/dt = (cos(phi) * cos(phi) + 0.1 * sin(phi) * sin(phi)) * sin(phi)\n",
                    initial_values: &[&[0.7, 0.4]],
                    n_per_episode: 100,
                    t_max: 10.0,
                },
            },
            Instance::VanDerPol => InstanceSpec {
                name: "VanDerPol",
                variable_names: &["x", "y"],
                source: SourceSpec::Simulated {
                    equations: "dx/dt = 10 * (y - (x * x * x / 3 - x))\n\
                                dy/dt = -0.1 * x\n",
                    initial_values: &[&[2.0, 0.1]],
                    n_per_episode: 100,
                    t_max: 10.0,
                },
            },
            Instance::LinearOscillatorSim => InstanceSpec {
                name: "LinearOscillatorSim",
                variable_names: &["x", "v"],
                source: SourceSpec::DataFile {
                    file_name: "linear_h_1.txt",
                    n_resample: 512,
                    first_block_only: false,
                },
            },
            Instance::LinearOscillatorReal => InstanceSpec {
                name: "LinearOscillatorReal",
                variable_names: &["x", "v"],
                source: SourceSpec::DataFile {
                    file_name: "real_linear_h_1.txt",
                    n_resample: 879,
                    first_block_only: false,
                },
            },
            Instance::PendulumSim => InstanceSpec {
                name: "PendulumSim",
                variable_names: &["theta", "omega"],
                source: SourceSpec::DataFile {
                    file_name: "pendulum_h_1.txt",
                    n_resample: 502,
                    first_block_only: false,
                },
            },
            Instance::PendulumReal => InstanceSpec {
                name: "PendulumReal",
                variable_names: &["theta", "omega"],
                source: SourceSpec::DataFile {
                    file_name: "real_pend_h_1.txt",
                    n_resample: 568,
                    first_block_only: false,
                },
            },
            Instance::CoupledOscillatorSim => InstanceSpec {
                name: "CoupledOscillatorSim",
                variable_names: &["x1", "x2", "v1", "v2"],
                source: SourceSpec::DataFile {
                    file_name: "double_linear_h_1.txt",
                    n_resample: 200,
                    first_block_only: false,
                },
            },
            Instance::CoupledOscillatorReal => InstanceSpec {
                name: "CoupledOscillatorReal",
                variable_names: &["x1", "x2", "v1", "v2"],
                source: SourceSpec::DataFile {
                    file_name: "real_double_linear_h_1.txt",
                    n_resample: 150,
                    first_block_only: false,
                },
            },
            Instance::DoublePendulumSim => InstanceSpec {
                name: "DoublePendulumSim",
                variable_names: &["theta1", "theta2", "omega1", "omega2"],
                source: SourceSpec::DataFile {
                    file_name: "double_pend_h_1.txt",
                    n_resample: 1355,
                    first_block_only: true,
                },
            },
            Instance::DoublePendulumReal => InstanceSpec {
                name: "DoublePendulumReal",
                variable_names: &["theta1", "theta2", "omega1", "omega2"],
                source: SourceSpec::DataFile {
                    file_name: "real_double_pend_h_1.txt",
                    n_resample: 200,
                    first_block_only: true,
                },
            },
        }
    }
}

/// The ground-truth model of a simulated instance (parsed from its textual
/// form; every literal coefficient is a parameter).
pub fn ground_truth(instance: Instance) -> Option<OdeSystemModel> {
    match instance.spec().source {
        SourceSpec::Simulated { equations, .. } => {
            Some(expr::deserialize(equations).expect("ground-truth equations parse"))
        }
        SourceSpec::DataFile { .. } => None,
    }
}

/// Generates the dataset of a simulated instance: fine fixed-step RK4
/// (1000 substeps per observation interval), cross-checked against the
/// adaptive integrator at rtol 1e-10 to 1e-6 agreement.
pub fn generate(instance: Instance) -> Result<TrajectoryDataset, ProblemError> {
    let spec = instance.spec();
    let SourceSpec::Simulated { initial_values, n_per_episode, t_max, .. } = spec.source else {
        return Err(ProblemError::NotSimulated(spec.name));
    };
    let model = ground_truth(instance).expect("simulated instance has ground truth");
    let fail = |reason: String| ProblemError::GenerationFailed { name: spec.name, reason };

    let mut episodes = Vec::with_capacity(initial_values.len());
    for y0 in initial_values {
        let grid = TimeGrid::new(0.0, t_max, n_per_episode)?;
        let h_internal = grid.step() / 1000.0;
        let sol = odeint::integrate_fixed_rk4(&model, model.theta(), y0, &grid, Some(h_internal));
        if !sol.status.is_ok() {
            return Err(fail(format!("RK4 generation failed with {:?}", sol.status)));
        }
        let check = odeint::integrate(
            &model,
            model.theta(),
            y0,
            &grid,
            &IvpControls { rtol: 1e-10, atol: 1e-12, ..IvpControls::default() },
        );
        if !check.status.is_ok() {
            return Err(fail(format!("adaptive cross-check failed with {:?}", check.status)));
        }
        let mut worst = 0.0f64;
        for j in 0..grid.n_points() {
            for i in 0..spec.dimension() {
                let scale = 1.0f64.max(sol.states[(i, j)].abs());
                worst = worst.max((sol.states[(i, j)] - check.states[(i, j)]).abs() / scale);
            }
        }
        if worst > 1e-6 {
            return Err(fail(format!(
                "RK4 and adaptive integration disagree by {worst:.3e} (tolerance 1e-6)"
            )));
        }
        episodes.push(Episode { grid, values: sol.states });
    }
    let names = spec.variable_names.iter().map(|s| s.to_string()).collect();
    let dataset = TrajectoryDataset::new(episodes, names)?;
    dataset.validate_variances()?;
    Ok(dataset)
}

/// A raw, possibly non-equidistant multivariate series: `values[var][k]`
/// sampled at `times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Natural cubic spline resampling of every variable onto an equidistant
/// grid spanning `[times[0], times[last]]`. Endpoints are reproduced
/// exactly.
pub fn resample_cubic_spline(series: &RawSeries, n_points: usize) -> DMatrix<f64> {
    assert!(series.times.len() >= 4, "resampling needs at least 4 points");
    assert!(n_points >= 2);
    let d = series.values.len();
    let t0 = series.times[0];
    let t1 = *series.times.last().unwrap();
    let step = (t1 - t0) / (n_points - 1) as f64;
    let mut out = DMatrix::zeros(d, n_points);
    for (i, var) in series.values.iter().enumerate() {
        let s = NaturalSpline::fit(&series.times, var);
        out[(i, 0)] = var[0];
        out[(i, n_points - 1)] = *var.last().unwrap();
        for j in 1..n_points - 1 {
            out[(i, j)] = s.eval(t0 + step * j as f64);
        }
    }
    out
}

/// Loads a whitespace-separated trajectory file (time column first, then the
/// instance's variables; `#` lines are comments) and resamples it to the
/// instance's equidistant point count. `row_range` selects data rows
/// (0-based, half-open) before any other processing; for the double-pendulum
/// files only the first contiguous segment (up to the first non-increasing
/// timestamp) is used when no range is given.
pub fn load_datafile(
    path: &Path,
    instance: Instance,
    row_range: Option<(usize, usize)>,
) -> Result<TrajectoryDataset, LoadError> {
    let spec = instance.spec();
    let SourceSpec::DataFile { n_resample, first_block_only, .. } = spec.source else {
        return Err(LoadError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("instance '{}' is not file-backed", spec.name),
        });
    };
    if !path.exists() {
        return Err(LoadError::MissingFile(path.to_path_buf()));
    }
    let content = std::fs::read_to_string(path)
        .map_err(|source| LoadError::Io { path: path.to_path_buf(), source })?;
    let d = spec.dimension();

    let mut rows: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != d + 1 {
            return Err(LoadError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected {} columns (t plus {} variables), found {}", d + 1, d, fields.len()),
            });
        }
        let mut nums = Vec::with_capacity(d + 1);
        for f in &fields {
            nums.push(f.parse::<f64>().map_err(|_| LoadError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("invalid number '{f}'"),
            })?);
        }
        rows.push((line_no, nums[0], nums[1..].to_vec()));
    }

    if let Some((start, end)) = row_range {
        let end = end.min(rows.len());
        let start = start.min(end);
        rows = rows[start..end].to_vec();
    } else if first_block_only {
        let mut cut = rows.len();
        for k in 1..rows.len() {
            if rows[k].1 <= rows[k - 1].1 {
                cut = k;
                break;
            }
        }
        rows.truncate(cut);
    }

    for k in 1..rows.len() {
        if rows[k].1 <= rows[k - 1].1 {
            return Err(LoadError::NonIncreasingTime { path: path.to_path_buf(), line: rows[k].0 });
        }
    }
    if rows.len() < 4 {
        return Err(LoadError::TooFewPoints {
            path: path.to_path_buf(),
            expected: "a trajectory".to_string(),
            found: rows.len(),
        });
    }

    let times: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let values: Vec<Vec<f64>> = (0..d).map(|i| rows.iter().map(|r| r.2[i]).collect()).collect();
    let series = RawSeries { times, values };
    let resampled = resample_cubic_spline(&series, n_resample);
    let grid = TimeGrid::new(series.times[0], *series.times.last().unwrap(), n_resample)?;
    let names = spec.variable_names.iter().map(|s| s.to_string()).collect();
    let dataset = TrajectoryDataset::new(vec![Episode { grid, values: resampled }], names)?;
    dataset.validate_variances()?;
    Ok(dataset)
}

/// Loads or generates the dataset for an instance. File-backed instances
/// resolve their file name under `data_dir`.
pub fn dataset_for(instance: Instance, data_dir: Option<&Path>) -> Result<TrajectoryDataset, ProblemError> {
    let spec = instance.spec();
    match spec.source {
        SourceSpec::Simulated { .. } => generate(instance),
        SourceSpec::DataFile { file_name, .. } => {
            let dir = data_dir.ok_or(ProblemError::NotFileBacked(spec.name))?;
            Ok(load_datafile(&dir.join(file_name), instance, None)?)
        }
    }
}

/// Plain-text dump of a dataset (the same column convention the loader
/// reads): comment header, then one `t v1 .. vD` row per observation, with
/// episodes separated by comment markers.
pub fn dump_dataset(dataset: &TrajectoryDataset, name: &str) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "# dataset: {name}");
    let _ = writeln!(out, "# columns: t {}", dataset.variable_names().join(" "));
    for (e, ep) in dataset.episodes().iter().enumerate() {
        if dataset.episodes().len() > 1 {
            let _ = writeln!(out, "# episode {}", e + 1);
        }
        for j in 0..ep.grid.n_points() {
            let _ = write!(out, "{}", ep.grid.point(j));
            for i in 0..dataset.dimension() {
                let _ = write!(out, " {}", ep.values[(i, j)]);
            }
            out.push('\n');
        }
    }
    out
}

/// FNV-1a checksum over the dataset's structure and exact bit patterns;
/// used to pin generated datasets in tests.
pub fn dataset_checksum(dataset: &TrajectoryDataset) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(&(dataset.dimension() as u64).to_le_bytes());
    eat(&(dataset.episodes().len() as u64).to_le_bytes());
    for ep in dataset.episodes() {
        eat(&(ep.grid.n_points() as u64).to_le_bytes());
        eat(&ep.grid.t0().to_bits().to_le_bytes());
        eat(&ep.grid.t_max().to_bits().to_le_bytes());
        for j in 0..ep.values.ncols() {
            for i in 0..ep.values.nrows() {
                eat(&ep.values[(i, j)].to_bits().to_le_bytes());
            }
        }
    }
    h
}
