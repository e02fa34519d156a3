//! Classical fixed-step fourth-order Runge-Kutta.

use nalgebra::DMatrix;

use super::{IvpSolution, IvpStatus, OdeRhs, TimeGrid};

/// Steps from grid point to grid point, subdividing each interval into
/// `ceil(step / h_internal)` equal substeps.
pub(crate) fn solve(rhs: &mut dyn OdeRhs, y0: &[f64], grid: &TimeGrid, h_internal: f64) -> IvpSolution {
    let n = rhs.dim();
    let n_out = grid.n_points();
    let h_grid = grid.step();
    let n_sub = (h_grid / h_internal).ceil().max(1.0) as usize;
    let h = h_grid / n_sub as f64;

    let mut states = DMatrix::from_element(n, n_out, f64::NAN);
    for (i, v) in y0.iter().enumerate() {
        states[(i, 0)] = *v;
    }
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut nfev = 0usize;
    let mut steps = 0usize;

    const GUARD: f64 = 1e10;
    if !y.iter().all(|v| v.is_finite() && v.abs() <= GUARD) {
        return IvpSolution {
            states,
            status: IvpStatus::NonFinite { t: grid.t0() },
            valid_points: 1,
            rhs_evaluations: 0,
            steps: 0,
        };
    }

    for j in 1..n_out {
        let t_left = grid.point(j - 1);
        for s in 0..n_sub {
            let t = t_left + h * s as f64;
            rhs.eval(t, &y, &mut k1);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k1[i];
            }
            rhs.eval(t + 0.5 * h, &tmp, &mut k2);
            for i in 0..n {
                tmp[i] = y[i] + 0.5 * h * k2[i];
            }
            rhs.eval(t + 0.5 * h, &tmp, &mut k3);
            for i in 0..n {
                tmp[i] = y[i] + h * k3[i];
            }
            rhs.eval(t + h, &tmp, &mut k4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            nfev += 4;
            steps += 1;
        }
        if !y.iter().all(|v| v.is_finite() && v.abs() <= GUARD) {
            return IvpSolution {
                states,
                status: IvpStatus::NonFinite { t: grid.point(j) },
                valid_points: j,
                rhs_evaluations: nfev,
                steps,
            };
        }
        for (i, v) in y.iter().enumerate() {
            states[(i, j)] = *v;
        }
    }

    IvpSolution { states, status: IvpStatus::Ok, valid_points: n_out, rhs_evaluations: nfev, steps }
}
