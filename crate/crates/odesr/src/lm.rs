//! Damped least-squares (Levenberg-Marquardt) minimization with exact
//! Jacobians. The residual callback owns all problem structure; this module
//! only sees `theta -> (r, J)` and counts every callback invocation so the
//! caller can charge evaluation budgets exactly.

use nalgebra::{Cholesky, DMatrix, DVector};

/// One residual evaluation: `r` (length m) and `J = dr/dtheta` (m x n).
/// Callbacks return `None` when the residual cannot be computed (for
/// instance a diverged initial value problem).
#[derive(Debug, Clone)]
pub struct ResidualValue {
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    /// Accepted-step budget.
    pub max_iterations: usize,
    pub initial_lambda: f64,
    /// Stop when an accepted step's relative cost decrease falls below this,
    /// or once the cost itself falls below this fraction of the initial cost.
    pub cost_reduction_tolerance: f64,
    /// Stop when the proposed step norm drops below this.
    pub step_norm_tolerance: f64,
}

impl LmConfig {
    pub fn with_iterations(max_iterations: usize) -> Self {
        LmConfig { max_iterations, ..LmConfig::default() }
    }
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iterations: 10,
            initial_lambda: 1e-3,
            cost_reduction_tolerance: 1e-9,
            step_norm_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmStatus {
    Converged,
    IterationLimit,
    /// The residual callback failed at the starting point; `theta` is the
    /// unchanged start vector.
    InvalidResidual,
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub theta: Vec<f64>,
    pub cost_initial: f64,
    pub cost_final: f64,
    /// Accepted steps.
    pub iterations_used: usize,
    /// Exact number of residual callback invocations.
    pub residual_evaluations: usize,
    pub status: LmStatus,
}

const LAMBDA_GROW: f64 = 10.0;
const LAMBDA_SHRINK: f64 = 10.0;
const LAMBDA_MAX: f64 = 1e12;
const DIAGONAL_FLOOR: f64 = 1e-12;
const COST_FLOOR: f64 = 1e-30;

fn cost_of(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

/// Minimizes `0.5 * ||r(theta)||^2` with multiplicative damping: lambda
/// shrinks 10x on accepted steps and grows 10x on rejections; the damped
/// normal equations `(J^T J + lambda diag(J^T J)) delta = -J^T r` are solved
/// densely with a floor on the diagonal. Returns the best parameters seen.
pub fn minimize(
    mut residual_fn: impl FnMut(&[f64]) -> Option<ResidualValue>,
    theta0: &[f64],
    config: &LmConfig,
) -> LmResult {
    let mut evals = 0usize;
    let mut theta = DVector::from_column_slice(theta0);
    let n = theta.len();

    evals += 1;
    let Some(mut current) = residual_fn(theta0).filter(|v| cost_of(&v.residuals).is_finite()) else {
        return LmResult {
            theta: theta0.to_vec(),
            cost_initial: f64::INFINITY,
            cost_final: f64::INFINITY,
            iterations_used: 0,
            residual_evaluations: evals,
            status: LmStatus::InvalidResidual,
        };
    };
    let cost_initial = cost_of(&current.residuals);
    let mut cost = cost_initial;
    let done = |cost_final, iterations, evals, status, theta: &DVector<f64>| LmResult {
        theta: theta.as_slice().to_vec(),
        cost_initial,
        cost_final,
        iterations_used: iterations,
        residual_evaluations: evals,
        status,
    };

    if n == 0 || cost <= COST_FLOOR {
        return done(cost, 0, evals, LmStatus::Converged, &theta);
    }

    let mut lambda = config.initial_lambda;
    let mut accepted = 0usize;
    loop {
        if accepted >= config.max_iterations {
            return done(cost, accepted, evals, LmStatus::IterationLimit, &theta);
        }

        let jtj = current.jacobian.transpose() * &current.jacobian;
        let jtr = current.jacobian.transpose() * &current.residuals;
        if !jtr.iter().all(|v| v.is_finite()) {
            // Gradient unusable; nothing more to do from here.
            return done(cost, accepted, evals, LmStatus::Converged, &theta);
        }

        // Inner damping loop: grow lambda until a step is accepted or the
        // damping saturates.
        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(DIAGONAL_FLOOR);
            }
            let step = Cholesky::new(a).map(|ch| ch.solve(&(-&jtr)));
            let Some(delta) = step.filter(|d| d.iter().all(|v| v.is_finite())) else {
                lambda *= LAMBDA_GROW;
                if lambda > LAMBDA_MAX {
                    return done(cost, accepted, evals, LmStatus::Converged, &theta);
                }
                continue;
            };

            if delta.norm() < config.step_norm_tolerance {
                return done(cost, accepted, evals, LmStatus::Converged, &theta);
            }

            let trial = &theta + &delta;
            evals += 1;
            let trial_value = residual_fn(trial.as_slice());
            let trial_cost = trial_value.as_ref().map(|v| cost_of(&v.residuals));
            match (trial_value, trial_cost) {
                (Some(value), Some(c_new)) if c_new.is_finite() && c_new < cost => {
                    let rel_decrease = (cost - c_new) / cost.max(COST_FLOOR);
                    theta = trial;
                    current = value;
                    cost = c_new;
                    accepted += 1;
                    lambda = (lambda / LAMBDA_SHRINK).max(1e-15);
                    if rel_decrease < config.cost_reduction_tolerance
                        || cost <= config.cost_reduction_tolerance * cost_initial
                        || cost <= COST_FLOOR
                    {
                        return done(cost, accepted, evals, LmStatus::Converged, &theta);
                    }
                    break;
                }
                _ => {
                    lambda *= LAMBDA_GROW;
                    if lambda > LAMBDA_MAX {
                        return done(cost, accepted, evals, LmStatus::Converged, &theta);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn linear_problem<'a>(x: &'a [f64], y: &'a [f64]) -> impl FnMut(&[f64]) -> Option<ResidualValue> + 'a {
        move |theta: &[f64]| {
            let r = DVector::from_iterator(x.len(), x.iter().zip(y).map(|(xi, yi)| yi - theta[0] * xi));
            let j = DMatrix::from_iterator(x.len(), 1, x.iter().map(|xi| -xi));
            Some(ResidualValue { residuals: r, jacobian: j })
        }
    }

    #[test]
    fn converges_on_linear_least_squares() {
        let x = [1.0, 2.0];
        let y = [2.0, 4.0];
        let result = minimize(linear_problem(&x, &y), &[0.0], &LmConfig::default());
        assert_relative_eq!(result.theta[0], 2.0, max_relative = 1e-6);
        assert!(result.iterations_used <= 2, "linear problems need at most 2 accepted steps");
        assert!(result.cost_final <= result.cost_initial);
    }

    #[test]
    fn zero_residual_returns_start_unchanged() {
        let f = |_theta: &[f64]| {
            Some(ResidualValue { residuals: DVector::zeros(3), jacobian: DMatrix::zeros(3, 2) })
        };
        let result = minimize(f, &[1.5, -0.5], &LmConfig::default());
        assert_eq!(result.status, LmStatus::Converged);
        assert_eq!(result.iterations_used, 0);
        assert_eq!(result.theta, vec![1.5, -0.5]);
        assert_eq!(result.residual_evaluations, 1);
    }

    #[test]
    fn invalid_at_start_reports_invalid_residual() {
        let f = |_theta: &[f64]| None;
        let result = minimize(f, &[1.0], &LmConfig::default());
        assert_eq!(result.status, LmStatus::InvalidResidual);
        assert_eq!(result.theta, vec![1.0]);
    }

    #[test]
    fn invalid_trial_points_are_rejected_not_fatal() {
        // Valid at the start, invalid everywhere else: LM must keep theta0.
        let start = [3.0];
        let f = |theta: &[f64]| {
            if (theta[0] - start[0]).abs() > 1e-12 {
                return None;
            }
            Some(ResidualValue {
                residuals: DVector::from_element(2, 1.0),
                jacobian: DMatrix::from_element(2, 1, 1.0),
            })
        };
        let result = minimize(f, &start, &LmConfig::default());
        assert_ne!(result.status, LmStatus::InvalidResidual);
        assert_eq!(result.theta, start.to_vec());
        assert_eq!(result.cost_final, result.cost_initial);
    }

    #[test]
    fn accepted_costs_are_monotone_and_evals_exact() {
        // Rosenbrock-style residuals: r1 = 10(y - x^2), r2 = 1 - x.
        let mut costs = Vec::new();
        let mut calls = 0usize;
        let result = minimize(
            |theta: &[f64]| {
                calls += 1;
                let (x, y) = (theta[0], theta[1]);
                let r = DVector::from_column_slice(&[10.0 * (y - x * x), 1.0 - x]);
                let j = DMatrix::from_row_slice(2, 2, &[-20.0 * x, 10.0, -1.0, 0.0]);
                let v = ResidualValue { residuals: r, jacobian: j };
                costs.push(0.5 * v.residuals.norm_squared());
                Some(v)
            },
            &[-1.2, 1.0],
            &LmConfig::with_iterations(50),
        );
        assert_eq!(calls, result.residual_evaluations);
        assert!(result.cost_final < result.cost_initial);
        assert_relative_eq!(result.theta[0], 1.0, max_relative = 1e-4);
        assert_relative_eq!(result.theta[1], 1.0, max_relative = 1e-4);
    }

    #[test]
    fn empty_parameter_vector_is_a_noop() {
        let f = |_theta: &[f64]| {
            Some(ResidualValue {
                residuals: DVector::from_element(2, 1.0),
                jacobian: DMatrix::zeros(2, 0),
            })
        };
        let result = minimize(f, &[], &LmConfig::default());
        assert_eq!(result.status, LmStatus::Converged);
        assert_eq!(result.iterations_used, 0);
    }
}
