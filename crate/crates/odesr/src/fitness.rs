//! Fitness evaluation: the SNMSE deviation measure, numeric derivative
//! approximation, the partitioned derivative-fit and IVP-fit residual
//! systems, and the two-step memetic parameter optimization with Lamarckian
//! write-back.
//!
//! The deviation measure for a `D x N` observation matrix `Y` and prediction
//! `Yhat` is the sum of normalized mean squared errors
//!
//! ```text
//! SNMSE(Y, Yhat) = sum_i 1/var(y_i) * 1/N * sum_j (y_ij - yhat_ij)^2
//! ```
//!
//! with per-variable population variances. Datasets with several episodes
//! score as the mean of per-episode SNMSE values over pooled variances.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{DualSeeding, EvalWorkspace, OdeSystemModel};
use crate::lm::{self, LmConfig, LmStatus, ResidualValue};
use crate::odeint::{self, IvpControls, TimeGrid};

/// Fitness assigned to models whose evaluation fails (diverged IVP,
/// non-finite arithmetic). Such models stay in the population as
/// worst-in-class instead of crashing the run.
pub const PENALTY_FITNESS: f64 = 1e12;

/// Guard against zero variance when scaling residuals of degenerate
/// (e.g. constant-derivative) signals.
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("dataset has no episodes")]
    Empty,
    #[error("episode {episode} has dimension {got}, expected {expected}")]
    DimensionMismatch { episode: usize, got: usize, expected: usize },
    #[error("episode {episode} has {got} observations but its grid lists {expected}")]
    LengthMismatch { episode: usize, got: usize, expected: usize },
    #[error("{0} variable names for dimension {1}")]
    NameCount(usize, usize),
    #[error("non-finite observation in episode {episode}, variable {variable}, point {point}")]
    NonFinite { episode: usize, variable: usize, point: usize },
    #[error("variable '{0}' has zero variance")]
    ZeroVariance(String),
}

/// One trajectory: an equidistant grid and the `D x N` observation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub grid: TimeGrid,
    pub values: DMatrix<f64>,
}

/// Equidistant observations of all state variables, possibly over several
/// episodes (one per initial condition). Variances are population variances
/// pooled over episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    episodes: Vec<Episode>,
    variable_names: Vec<String>,
    variances: Vec<f64>,
}

impl TrajectoryDataset {
    /// Checks shapes and finiteness and computes pooled variances. Variance
    /// positivity is a loader-level concern: see [`validate_variances`].
    ///
    /// [`validate_variances`]: TrajectoryDataset::validate_variances
    pub fn new(episodes: Vec<Episode>, variable_names: Vec<String>) -> Result<Self, DatasetError> {
        let Some(first) = episodes.first() else {
            return Err(DatasetError::Empty);
        };
        let dim = first.values.nrows();
        if variable_names.len() != dim {
            return Err(DatasetError::NameCount(variable_names.len(), dim));
        }
        for (e, ep) in episodes.iter().enumerate() {
            if ep.values.nrows() != dim {
                return Err(DatasetError::DimensionMismatch {
                    episode: e,
                    got: ep.values.nrows(),
                    expected: dim,
                });
            }
            if ep.values.ncols() != ep.grid.n_points() {
                return Err(DatasetError::LengthMismatch {
                    episode: e,
                    got: ep.values.ncols(),
                    expected: ep.grid.n_points(),
                });
            }
            for i in 0..dim {
                for j in 0..ep.values.ncols() {
                    if !ep.values[(i, j)].is_finite() {
                        return Err(DatasetError::NonFinite { episode: e, variable: i, point: j });
                    }
                }
            }
        }
        let variances = pooled_variances(&episodes, dim);
        Ok(TrajectoryDataset { episodes, variable_names, variances })
    }

    /// Loader-level validation: every variable must vary.
    pub fn validate_variances(&self) -> Result<(), DatasetError> {
        for (name, v) in self.variable_names.iter().zip(&self.variances) {
            if *v <= 0.0 {
                return Err(DatasetError::ZeroVariance(name.clone()));
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.episodes[0].values.nrows()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    /// Per-variable population variances pooled over episodes.
    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn total_points(&self) -> usize {
        self.episodes.iter().map(|e| e.values.ncols()).sum()
    }
}

fn pooled_variances(episodes: &[Episode], dim: usize) -> Vec<f64> {
    let total: usize = episodes.iter().map(|e| e.values.ncols()).sum();
    (0..dim)
        .map(|i| {
            let mut mean = 0.0;
            for e in episodes {
                for j in 0..e.values.ncols() {
                    mean += e.values[(i, j)];
                }
            }
            mean /= total as f64;
            let mut var = 0.0;
            for e in episodes {
                for j in 0..e.values.ncols() {
                    let d = e.values[(i, j)] - mean;
                    var += d * d;
                }
            }
            var / total as f64
        })
        .collect()
}

/// Shared evaluation counters; safe to bump from parallel evaluations.
#[derive(Debug, Default)]
pub struct EvalBudget {
    tree_evaluations: AtomicU64,
    ivp_solves: AtomicU64,
    lm_residual_evaluations: AtomicU64,
    fitness_evaluations: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BudgetSnapshot {
    pub tree_evaluations: u64,
    pub ivp_solves: u64,
    pub lm_residual_evaluations: u64,
    pub fitness_evaluations: u64,
}

impl EvalBudget {
    pub fn snapshot(&self) -> BudgetSnapshot {
        BudgetSnapshot {
            tree_evaluations: self.tree_evaluations.load(Ordering::Relaxed),
            ivp_solves: self.ivp_solves.load(Ordering::Relaxed),
            lm_residual_evaluations: self.lm_residual_evaluations.load(Ordering::Relaxed),
            fitness_evaluations: self.fitness_evaluations.load(Ordering::Relaxed),
        }
    }

    fn add_tree_evaluations(&self, n: u64) {
        self.tree_evaluations.fetch_add(n, Ordering::Relaxed);
    }

    fn add_ivp_solves(&self, n: u64) {
        self.ivp_solves.fetch_add(n, Ordering::Relaxed);
    }

    fn add_lm_residual_evaluation(&self) {
        self.lm_residual_evaluations.fetch_add(1, Ordering::Relaxed);
    }

    fn add_fitness_evaluation(&self) {
        self.fitness_evaluations.fetch_add(1, Ordering::Relaxed);
    }
}

/// Which scalar the search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitnessMode {
    /// Normalized MSE of the right-hand sides against approximated derivatives.
    Derivative,
    /// SNMSE of the integrated IVP solution.
    Ivp,
    /// Unweighted sum of both.
    DerivativePlusIvp,
}

/// Normalization of the derivative-fit objective (the published measure
/// leaves this open; the derivative variance is the default).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeNormalization {
    VarianceOfDerivatives,
    VarianceOfStates,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessConfig {
    pub mode: FitnessMode,
    pub optimize_derivative_step: bool,
    pub optimize_ivp_step: bool,
    pub lm_iters_derivative: usize,
    pub lm_iters_ivp: usize,
    pub controls: IvpControls,
    pub derivative_normalization: DerivativeNormalization,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        FitnessConfig {
            mode: FitnessMode::Ivp,
            optimize_derivative_step: false,
            optimize_ivp_step: false,
            lm_iters_derivative: 10,
            lm_iters_ivp: 10,
            controls: IvpControls::default(),
            derivative_normalization: DerivativeNormalization::VarianceOfDerivatives,
        }
    }
}

/// The six named algorithm configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConfigurationId {
    D,
    I,
    DPlusI,
    DOpt,
    IOpt,
    IOptDOpt,
}

impl ConfigurationId {
    pub const ALL: [ConfigurationId; 6] = [
        ConfigurationId::D,
        ConfigurationId::I,
        ConfigurationId::DPlusI,
        ConfigurationId::DOpt,
        ConfigurationId::IOpt,
        ConfigurationId::IOptDOpt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ConfigurationId::D => "D",
            ConfigurationId::I => "I",
            ConfigurationId::DPlusI => "D+I",
            ConfigurationId::DOpt => "D_opt",
            ConfigurationId::IOpt => "I_opt",
            ConfigurationId::IOptDOpt => "I_opt+D_opt",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }

    /// Whether this configuration runs gradient-based parameter optimization
    /// (the second experiment group, with the tighter generation budget).
    pub fn uses_parameter_optimization(&self) -> bool {
        matches!(self, ConfigurationId::DOpt | ConfigurationId::IOpt | ConfigurationId::IOptDOpt)
    }

    pub fn fitness_config(&self) -> FitnessConfig {
        let base = FitnessConfig::default();
        match self {
            ConfigurationId::D => FitnessConfig { mode: FitnessMode::Derivative, ..base },
            ConfigurationId::I => FitnessConfig { mode: FitnessMode::Ivp, ..base },
            ConfigurationId::DPlusI => FitnessConfig { mode: FitnessMode::DerivativePlusIvp, ..base },
            ConfigurationId::DOpt => FitnessConfig {
                mode: FitnessMode::Derivative,
                optimize_derivative_step: true,
                ..base
            },
            ConfigurationId::IOpt => {
                FitnessConfig { mode: FitnessMode::Ivp, optimize_ivp_step: true, ..base }
            }
            ConfigurationId::IOptDOpt => FitnessConfig {
                mode: FitnessMode::Ivp,
                optimize_derivative_step: true,
                optimize_ivp_step: true,
                ..base
            },
        }
    }
}

impl std::fmt::Display for ConfigurationId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one run needs to score candidates: the dataset, cached
/// derivative approximations, and the evaluation counters.
#[derive(Debug)]
pub struct FitContext {
    dataset: TrajectoryDataset,
    derivatives: Vec<DMatrix<f64>>,
    derivative_variances: Vec<f64>,
    config: FitnessConfig,
    budget: EvalBudget,
}

impl FitContext {
    pub fn new(dataset: TrajectoryDataset, config: FitnessConfig) -> Self {
        let derivatives = approximate_derivatives(&dataset);
        let derivative_episodes: Vec<Episode> = dataset
            .episodes()
            .iter()
            .zip(&derivatives)
            .map(|(ep, dy)| Episode { grid: ep.grid, values: dy.clone() })
            .collect();
        let derivative_variances = pooled_variances(&derivative_episodes, dataset.dimension());
        FitContext { dataset, derivatives, derivative_variances, config, budget: EvalBudget::default() }
    }

    pub fn dataset(&self) -> &TrajectoryDataset {
        &self.dataset
    }

    pub fn derivatives(&self) -> &[DMatrix<f64>] {
        &self.derivatives
    }

    pub fn config(&self) -> &FitnessConfig {
        &self.config
    }

    pub fn budget(&self) -> &EvalBudget {
        &self.budget
    }

    fn derivative_norm_variance(&self, i: usize) -> f64 {
        let v = match self.config.derivative_normalization {
            DerivativeNormalization::VarianceOfDerivatives => self.derivative_variances[i],
            DerivativeNormalization::VarianceOfStates => self.dataset.variances()[i],
        };
        v.max(VARIANCE_FLOOR)
    }
}

/// Contiguous column view; nalgebra matrices are column-major.
fn column_slice(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let d = m.nrows();
    &m.as_slice()[j * d..(j + 1) * d]
}

/// The deviation measure for one episode, exactly as defined above. Returns
/// [`PENALTY_FITNESS`] when `yhat` contains non-finite entries.
pub fn snmse(y: &DMatrix<f64>, yhat: &DMatrix<f64>, variances: &[f64]) -> f64 {
    assert_eq!(y.shape(), yhat.shape(), "shape mismatch");
    assert_eq!(y.nrows(), variances.len(), "variance count mismatch");
    if !yhat.iter().all(|v| v.is_finite()) {
        return PENALTY_FITNESS;
    }
    let n = y.ncols() as f64;
    let mut total = 0.0;
    for i in 0..y.nrows() {
        let mut sq = 0.0;
        for j in 0..y.ncols() {
            let d = y[(i, j)] - yhat[(i, j)];
            sq += d * d;
        }
        total += sq / (n * variances[i]);
    }
    total
}

/// Central differences at interior points, second-order one-sided stencils
/// at the endpoints. Requires at least 3 points per episode.
pub fn approximate_derivatives(dataset: &TrajectoryDataset) -> Vec<DMatrix<f64>> {
    dataset
        .episodes()
        .iter()
        .map(|ep| {
            let y = &ep.values;
            let (d, n) = y.shape();
            assert!(n >= 3, "derivative approximation needs at least 3 points");
            let h = ep.grid.step();
            let mut dy = DMatrix::zeros(d, n);
            for i in 0..d {
                dy[(i, 0)] = (-3.0 * y[(i, 0)] + 4.0 * y[(i, 1)] - y[(i, 2)]) / (2.0 * h);
                for j in 1..n - 1 {
                    dy[(i, j)] = (y[(i, j + 1)] - y[(i, j - 1)]) / (2.0 * h);
                }
                dy[(i, n - 1)] =
                    (3.0 * y[(i, n - 1)] - 4.0 * y[(i, n - 2)] + y[(i, n - 3)]) / (2.0 * h);
            }
            dy
        })
        .collect()
}

/// Partitioned derivative-fit residuals: observed values substitute for all
/// state variables, no integration. Row `(e, i, j)` is
/// `(f_i(Y_(.,j), theta) - dY_ij) / sqrt(var_i * N_e * E)`, which makes
/// `||r||^2` equal the derivative-mode objective. The Jacobian comes from
/// forward-mode differentiation of the trees.
pub fn derivative_residuals(
    model: &OdeSystemModel,
    theta: &[f64],
    ctx: &FitContext,
) -> Option<ResidualValue> {
    let ds = ctx.dataset();
    let d = model.dimension();
    let p = theta.len();
    let n_episodes = ds.episodes().len();
    let m: usize = ds.total_points() * d;
    let mut r = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, p);
    let mut ws = EvalWorkspace::default();
    let mut grad = vec![0.0; p];

    let mut row = 0usize;
    for (ep, dy) in ds.episodes().iter().zip(ctx.derivatives()) {
        let n = ep.values.ncols();
        for i in 0..d {
            let scale = 1.0
                / (ctx.derivative_norm_variance(i) * n as f64 * n_episodes as f64).sqrt();
            for j in 0..n {
                let state = column_slice(&ep.values, j);
                let value =
                    model.tree(i).eval_dual_into(state, theta, DualSeeding::Parameters, &mut ws, &mut grad);
                let res = (value - dy[(i, j)]) * scale;
                if !res.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                    ctx.budget.add_tree_evaluations((row + 1) as u64);
                    return None;
                }
                r[row] = res;
                for k in 0..p {
                    jac[(row, k)] = grad[k] * scale;
                }
                row += 1;
            }
        }
    }
    ctx.budget.add_tree_evaluations(m as u64);
    Some(ResidualValue { residuals: r, jacobian: jac })
}

/// IVP-fit residuals: one sensitivity integration per episode from the
/// observed initial values. Row `(e, i, j)` is
/// `(yhat_ij - y_ij) / sqrt(var_i * N_e * E)`; `||r||^2` equals the
/// episode-mean SNMSE and the Jacobian rows are the matching sensitivity
/// entries. A failed integration invalidates the whole residual.
pub fn ivp_residuals(model: &OdeSystemModel, theta: &[f64], ctx: &FitContext) -> Option<ResidualValue> {
    let ds = ctx.dataset();
    let d = model.dimension();
    let p = theta.len();
    let n_episodes = ds.episodes().len();
    let m: usize = ds.total_points() * d;
    let mut r = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, p);

    let mut row = 0usize;
    for ep in ds.episodes() {
        let y0 = column_slice(&ep.values, 0);
        let sol = odeint::integrate_with_sensitivities(model, theta, y0, &ep.grid, &ctx.config.controls);
        ctx.budget.add_ivp_solves(1);
        ctx.budget.add_tree_evaluations((d * sol.rhs_evaluations) as u64);
        if !sol.status.is_ok() {
            return None;
        }
        let n = ep.values.ncols();
        let scales: Vec<f64> = (0..d)
            .map(|i| {
                1.0 / (ds.variances()[i].max(VARIANCE_FLOOR) * n as f64 * n_episodes as f64).sqrt()
            })
            .collect();
        for j in 0..n {
            for (i, scale) in scales.iter().enumerate() {
                r[row] = (sol.states[(i, j)] - ep.values[(i, j)]) * scale;
                for k in 0..p {
                    jac[(row, k)] = sol.sensitivities[j][(i, k)] * scale;
                }
                row += 1;
            }
        }
    }
    Some(ResidualValue { residuals: r, jacobian: jac })
}

/// The derivative-mode objective: normalized MSE of the right-hand sides
/// against the cached derivative approximations, averaged over episodes.
pub fn derivative_objective(model: &OdeSystemModel, theta: &[f64], ctx: &FitContext) -> f64 {
    let ds = ctx.dataset();
    let d = model.dimension();
    let mut stack = Vec::new();
    let mut acc = 0.0;
    let mut evals = 0u64;
    for (ep, dy) in ds.episodes().iter().zip(ctx.derivatives()) {
        let n = ep.values.ncols();
        for i in 0..d {
            let mut sq = 0.0;
            for j in 0..n {
                let state = column_slice(&ep.values, j);
                let value = model.tree(i).evaluate_into(state, theta, &mut stack);
                let res = value - dy[(i, j)];
                sq += res * res;
            }
            evals += n as u64;
            acc += sq / (ctx.derivative_norm_variance(i) * n as f64);
        }
    }
    ctx.budget.add_tree_evaluations(evals);
    let value = acc / ds.episodes().len() as f64;
    if value.is_finite() {
        value
    } else {
        PENALTY_FITNESS
    }
}

/// The IVP-mode objective: integrates the model from each episode's first
/// observation and scores the deviation measure, averaged over episodes.
/// Any integration failure yields the penalty fitness.
pub fn ivp_snmse(model: &OdeSystemModel, theta: &[f64], ctx: &FitContext) -> f64 {
    let ds = ctx.dataset();
    let d = model.dimension();
    let mut acc = 0.0;
    for ep in ds.episodes() {
        let y0 = column_slice(&ep.values, 0);
        let sol = odeint::integrate(model, theta, y0, &ep.grid, &ctx.config.controls);
        ctx.budget.add_ivp_solves(1);
        ctx.budget.add_tree_evaluations((d * sol.rhs_evaluations) as u64);
        if !sol.status.is_ok() {
            return PENALTY_FITNESS;
        }
        acc += snmse(&ep.values, &sol.states, ds.variances());
    }
    let value = acc / ds.episodes().len() as f64;
    if value.is_finite() {
        value
    } else {
        PENALTY_FITNESS
    }
}

/// Scores a model under the context's configuration. Runs the configured
/// local-optimization steps first (derivative fit, then IVP fit), each for
/// its own LM iteration budget, and returns the optimized parameters for
/// Lamarckian write-back alongside the scalar fitness.
///
/// The IVP-fit step is gated on a plain integration probe: a model whose
/// trajectory already diverges at the current parameters keeps them (the
/// same outcome LM reaches through its invalid-at-start path) without paying
/// for sensitivity solves. The probe doubles as the mode-I fitness whenever
/// the parameters end up unchanged.
pub fn evaluate_fitness(model: &OdeSystemModel, ctx: &FitContext) -> (f64, Vec<f64>) {
    ctx.budget.add_fitness_evaluation();
    let cfg = ctx.config;
    let mut theta = model.theta().to_vec();

    if cfg.optimize_derivative_step && !theta.is_empty() {
        let result = lm::minimize(
            |th| {
                ctx.budget.add_lm_residual_evaluation();
                derivative_residuals(model, th, ctx)
            },
            &theta,
            &LmConfig::with_iterations(cfg.lm_iters_derivative),
        );
        if result.status != LmStatus::InvalidResidual {
            theta = result.theta;
        }
    }

    // Integrated SNMSE at the current theta, when already known.
    let mut ivp_at_theta: Option<f64> = None;
    if cfg.optimize_ivp_step && !theta.is_empty() {
        let probe = ivp_snmse(model, &theta, ctx);
        ivp_at_theta = Some(probe);
        if probe < PENALTY_FITNESS {
            let result = lm::minimize(
                |th| {
                    ctx.budget.add_lm_residual_evaluation();
                    ivp_residuals(model, th, ctx)
                },
                &theta,
                &LmConfig::with_iterations(cfg.lm_iters_ivp),
            );
            if result.status != LmStatus::InvalidResidual && result.iterations_used > 0 {
                theta = result.theta;
                ivp_at_theta = None;
            }
        }
    }

    let mut ivp_value = |theta: &[f64]| ivp_at_theta.take().unwrap_or_else(|| ivp_snmse(model, theta, ctx));
    let fitness = match cfg.mode {
        FitnessMode::Derivative => derivative_objective(model, &theta, ctx),
        FitnessMode::Ivp => ivp_value(&theta),
        FitnessMode::DerivativePlusIvp => {
            let d = derivative_objective(model, &theta, ctx);
            let i = ivp_value(&theta);
            if d >= PENALTY_FITNESS || i >= PENALTY_FITNESS {
                PENALTY_FITNESS
            } else {
                d + i
            }
        }
    };
    (fitness, theta)
}
