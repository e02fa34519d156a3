//! Initial-value-problem integration with optional forward sensitivities.
//!
//! The workhorse is an explicit Dormand-Prince 5(4) pair with dense output
//! for sampling the observation grid. Parameter sensitivities are obtained
//! by integrating the augmented system `Sdot = (df/du) S + df/dtheta`
//! jointly with the states, with both Jacobian blocks supplied exactly by
//! forward-mode differentiation of the expression trees. A fixed-step
//! classical RK4 is provided for deterministic dataset generation.

mod dopri5;
mod rk4;

pub use dopri5::hinit;

use nalgebra::DMatrix;

use crate::expr::{DualSeeding, EvalWorkspace, OdeSystemModel};

/// Equidistant observation grid including both endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_max: f64,
    n_points: usize,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GridError {
    #[error("grid needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("grid end {t_max} must exceed start {t0}")]
    EmptySpan { t0: f64, t_max: f64 },
}

impl TimeGrid {
    pub fn new(t0: f64, t_max: f64, n_points: usize) -> Result<Self, GridError> {
        if n_points < 2 {
            return Err(GridError::TooFewPoints(n_points));
        }
        if t_max <= t0 || !(t_max - t0).is_finite() {
            return Err(GridError::EmptySpan { t0, t_max });
        }
        Ok(TimeGrid { t0, t_max, n_points })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Grid spacing `(t_max - t0) / (n - 1)`.
    pub fn step(&self) -> f64 {
        (self.t_max - self.t0) / (self.n_points - 1) as f64
    }

    pub fn point(&self, j: usize) -> f64 {
        if j + 1 == self.n_points {
            self.t_max
        } else {
            self.t0 + self.step() * j as f64
        }
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(|j| self.point(j))
    }
}

/// Integration outcome. Failure statuses are sticky: grid columns past the
/// failure point are NaN and `valid_points` marks the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IvpStatus {
    Ok,
    /// A state or right-hand side became non-finite, or a state exceeded the
    /// overflow guard, near time `t`.
    NonFinite { t: f64 },
    /// The internal step budget ran out (stiff or degenerate candidate).
    StepLimitExceeded,
}

impl IvpStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, IvpStatus::Ok)
    }
}

/// Tolerances and limits for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvpControls {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// States with magnitude beyond this abort integration as divergent.
    pub overflow_guard: f64,
}

impl Default for IvpControls {
    fn default() -> Self {
        IvpControls { rtol: 1e-6, atol: 1e-8, max_steps: 100_000, overflow_guard: 1e10 }
    }
}

/// States sampled on the observation grid (one column per grid point).
#[derive(Debug, Clone, PartialEq)]
pub struct IvpSolution {
    pub states: DMatrix<f64>,
    pub status: IvpStatus,
    /// Number of leading grid columns that hold valid values.
    pub valid_points: usize,
    pub rhs_evaluations: usize,
    pub steps: usize,
}

/// States plus parameter sensitivities on the grid;
/// `sensitivities[j][(i, k)] = d y_i(t_j) / d theta_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivitySolution {
    pub states: DMatrix<f64>,
    pub sensitivities: Vec<DMatrix<f64>>,
    pub status: IvpStatus,
    pub valid_points: usize,
    pub rhs_evaluations: usize,
    pub steps: usize,
}

/// Right-hand side of a first-order system. `eval` receives the full state
/// slice and writes the derivative; implementations may keep scratch space.
pub trait OdeRhs {
    fn dim(&self) -> usize;
    fn eval(&mut self, t: f64, y: &[f64], dydt: &mut [f64]);
}

/// Plain model right-hand side: `dydt[i] = f_i(y, theta)`.
pub struct ModelRhs<'a> {
    model: &'a OdeSystemModel,
    theta: &'a [f64],
    stack: Vec<f64>,
}

impl<'a> ModelRhs<'a> {
    pub fn new(model: &'a OdeSystemModel, theta: &'a [f64]) -> Self {
        ModelRhs { model, theta, stack: Vec::new() }
    }
}

impl OdeRhs for ModelRhs<'_> {
    fn dim(&self) -> usize {
        self.model.dimension()
    }

    fn eval(&mut self, _t: f64, y: &[f64], dydt: &mut [f64]) {
        self.model.eval_rhs(y, self.theta, dydt, &mut self.stack);
    }
}

/// Augmented right-hand side for states plus sensitivities. Layout:
/// `[y_0..y_D, S_00..S_0P, S_10..S_1P, ...]` with `S_ik = dy_i/dtheta_k`.
pub struct SensitivityRhs<'a> {
    model: &'a OdeSystemModel,
    theta: &'a [f64],
    dim: usize,
    n_params: usize,
    ws: EvalWorkspace,
    grad: Vec<f64>,
}

impl<'a> SensitivityRhs<'a> {
    pub fn new(model: &'a OdeSystemModel, theta: &'a [f64]) -> Self {
        let dim = model.dimension();
        let n_params = theta.len();
        SensitivityRhs {
            model,
            theta,
            dim,
            n_params,
            ws: EvalWorkspace::default(),
            grad: vec![0.0; dim + n_params],
        }
    }
}

impl OdeRhs for SensitivityRhs<'_> {
    fn dim(&self) -> usize {
        self.dim * (1 + self.n_params)
    }

    fn eval(&mut self, _t: f64, y: &[f64], dydt: &mut [f64]) {
        let d = self.dim;
        let p = self.n_params;
        let (state, sens) = y.split_at(d);
        let (dstate, dsens) = dydt.split_at_mut(d);
        for i in 0..d {
            let value = self.model.tree(i).eval_dual_into(
                state,
                self.theta,
                DualSeeding::StateThenParameters { dim: d },
                &mut self.ws,
                &mut self.grad,
            );
            dstate[i] = value;
            let df_du = &self.grad[..d];
            let df_dtheta = &self.grad[d..];
            // Sdot_i. = sum_j df_i/du_j * S_j. + df_i/dtheta
            let row = &mut dsens[i * p..(i + 1) * p];
            row.copy_from_slice(df_dtheta);
            for (j, coeff) in df_du.iter().enumerate() {
                let s_row = &sens[j * p..(j + 1) * p];
                for (r, s) in row.iter_mut().zip(s_row) {
                    *r += coeff * s;
                }
            }
        }
    }
}

/// Integrates the model from `y0` over `grid` with the adaptive
/// Dormand-Prince 5(4) method, sampling grid points via dense output. The
/// first grid column is exactly `y0`.
pub fn integrate(
    model: &OdeSystemModel,
    theta: &[f64],
    y0: &[f64],
    grid: &TimeGrid,
    controls: &IvpControls,
) -> IvpSolution {
    assert_eq!(y0.len(), model.dimension(), "initial value dimension mismatch");
    let mut rhs = ModelRhs::new(model, theta);
    let raw = dopri5::solve(&mut rhs, y0, grid, controls, y0.len());
    IvpSolution {
        states: raw.states,
        status: raw.status,
        valid_points: raw.valid_points,
        rhs_evaluations: raw.rhs_evaluations,
        steps: raw.steps,
    }
}

/// Integrates states and forward sensitivities jointly. Sensitivities start
/// at zero (initial values do not depend on theta) and share the adaptive
/// error control with the states.
pub fn integrate_with_sensitivities(
    model: &OdeSystemModel,
    theta: &[f64],
    y0: &[f64],
    grid: &TimeGrid,
    controls: &IvpControls,
) -> SensitivitySolution {
    let d = model.dimension();
    let p = theta.len();
    assert_eq!(y0.len(), d, "initial value dimension mismatch");
    let mut aug0 = vec![0.0; d * (1 + p)];
    aug0[..d].copy_from_slice(y0);
    let mut rhs = SensitivityRhs::new(model, theta);
    let raw = dopri5::solve(&mut rhs, &aug0, grid, controls, d);

    let n = grid.n_points();
    let mut states = DMatrix::from_element(d, n, f64::NAN);
    let mut sensitivities = Vec::with_capacity(n);
    for j in 0..n {
        if j < raw.valid_points {
            let col = raw.states.column(j);
            let mut s = DMatrix::zeros(d, p);
            for i in 0..d {
                states[(i, j)] = col[i];
                for k in 0..p {
                    s[(i, k)] = col[d + i * p + k];
                }
            }
            sensitivities.push(s);
        } else {
            sensitivities.push(DMatrix::from_element(d, p, f64::NAN));
        }
    }
    SensitivitySolution {
        states,
        sensitivities,
        status: raw.status,
        valid_points: raw.valid_points,
        rhs_evaluations: raw.rhs_evaluations,
        steps: raw.steps,
    }
}

/// Classical fixed-step RK4, each grid interval subdivided into
/// `ceil(step / h_internal)` equal substeps. `h_internal` defaults to
/// `1e-3 * (t_max - t0)`. Deterministic; used for dataset generation.
pub fn integrate_fixed_rk4(
    model: &OdeSystemModel,
    theta: &[f64],
    y0: &[f64],
    grid: &TimeGrid,
    h_internal: Option<f64>,
) -> IvpSolution {
    assert_eq!(y0.len(), model.dimension(), "initial value dimension mismatch");
    let h_internal = h_internal.unwrap_or(1e-3 * (grid.t_max() - grid.t0()));
    let mut rhs = ModelRhs::new(model, theta);
    rk4::solve(&mut rhs, y0, grid, h_internal)
}
