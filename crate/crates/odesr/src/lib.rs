//! Identification of ODE systems from observed trajectories.
//!
//! The library evolves systems of ordinary differential equations with
//! genetic programming over expression trees and refines numeric parameters
//! with Levenberg-Marquardt steps driven by forward sensitivity analysis of
//! the initial value problem.
//!
//! Module map:
//! - [`expr`] — expression trees, forward-mode differentiation, random
//!   creation and genetic operators, textual model format.
//! - [`odeint`] — adaptive Dormand-Prince 5(4) integration with optional
//!   forward sensitivities, plus fixed-step RK4 for dataset generation.
//! - [`lm`] — damped least-squares minimization with exact Jacobians.
//! - [`fitness`] — trajectory datasets, the SNMSE deviation measure, and the
//!   two-step memetic parameter optimization.
//! - [`evo`] — the offspring-selection genetic algorithm.
//! - [`problems`] — the benchmark problem instances (simulated generators
//!   and data-file loaders with cubic-spline resampling).

pub mod evo;
pub mod expr;
pub mod fitness;
pub mod lm;
pub mod odeint;
pub mod problems;
