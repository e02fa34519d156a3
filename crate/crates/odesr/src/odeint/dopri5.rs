//! Dormand-Prince 5(4) with dense output (Hairer's DOPRI5 formulation):
//! 7 stages, FSAL, embedded 4th-order error estimate, PI step-size control,
//! and the 4th-order interpolation polynomial for sampling output points
//! inside accepted steps.

use nalgebra::DMatrix;

use super::{IvpControls, IvpStatus, OdeRhs, TimeGrid};

const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    // Final row doubles as the 5th-order weights b.
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

/// b - bhat: weights of the embedded error estimate.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dense-output weights for the 5th interpolation coefficient.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

const SAFE: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;
/// Step growth/shrink factor bounds (h_new in [h/FACC1_INV ... ]):
/// shrink at most 1/5, grow at most 10x per step.
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

pub(crate) struct RawSolution {
    pub states: DMatrix<f64>,
    pub status: IvpStatus,
    pub valid_points: usize,
    pub rhs_evaluations: usize,
    pub steps: usize,
}

/// Initial step size heuristic (Hairer's HINIT). Costs one RHS evaluation.
#[allow(clippy::too_many_arguments)]
pub fn hinit(
    rhs: &mut dyn OdeRhs,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    span: f64,
    rtol: f64,
    atol: f64,
    nfev: &mut usize,
) -> f64 {
    let n = y0.len();
    let mut dnf = 0.0;
    let mut dny = 0.0;
    for i in 0..n {
        let sk = atol + rtol * y0[i].abs();
        dnf += (f0[i] / sk).powi(2);
        dny += (y0[i] / sk).powi(2);
    }
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(span);

    let mut y1 = vec![0.0; n];
    for i in 0..n {
        y1[i] = y0[i] + h * f0[i];
    }
    let mut f1 = vec![0.0; n];
    rhs.eval(t0 + h, &y1, &mut f1);
    *nfev += 1;

    let mut der2 = 0.0;
    for i in 0..n {
        let sk = atol + rtol * y0[i].abs();
        der2 += ((f1[i] - f0[i]) / sk).powi(2);
    }
    der2 = der2.sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if !der12.is_finite() {
        h * 1e-2
    } else if der12 <= 1e-15 {
        (h * 1e-3).max(1e-6)
    } else {
        (0.01 / der12).powf(0.2)
    };
    (100.0 * h).min(h1).min(span)
}

pub(crate) fn solve(
    rhs: &mut dyn OdeRhs,
    y0: &[f64],
    grid: &TimeGrid,
    controls: &IvpControls,
    guard_dims: usize,
) -> RawSolution {
    let n = rhs.dim();
    assert_eq!(y0.len(), n);
    let n_out = grid.n_points();
    let t0 = grid.t0();
    let t_end = grid.t_max();
    let span = t_end - t0;

    let mut states = DMatrix::from_element(n, n_out, f64::NAN);
    for (i, v) in y0.iter().enumerate() {
        states[(i, 0)] = *v;
    }
    let mut nfev = 0usize;
    let mut steps = 0usize;
    let finish = |status, valid, nfev, steps, states| RawSolution {
        states,
        status,
        valid_points: valid,
        rhs_evaluations: nfev,
        steps,
    };

    if !all_finite_guarded(y0, guard_dims, controls.overflow_guard) {
        return finish(IvpStatus::NonFinite { t: t0 }, 1, nfev, steps, states);
    }

    let mut y = y0.to_vec();
    let mut t = t0;
    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; n]).collect();
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut cont: Vec<Vec<f64>> = (0..5).map(|_| vec![0.0; n]).collect();

    rhs.eval(t, &y, &mut k[0]);
    nfev += 1;
    if !k[0].iter().all(|v| v.is_finite()) {
        return finish(IvpStatus::NonFinite { t }, 1, nfev, steps, states);
    }

    let (rtol, atol) = (controls.rtol, controls.atol);
    let mut h = {
        let f0 = k[0].clone();
        hinit(rhs, t, &y, &f0, span, rtol, atol, &mut nfev)
    };
    if !h.is_finite() || h <= 0.0 {
        h = 1e-6 * span;
    }

    let mut next = 1usize;
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let mut saw_nonfinite_trial = false;

    while next < n_out {
        if steps >= controls.max_steps {
            return finish(IvpStatus::StepLimitExceeded, next, nfev, steps, states);
        }
        if h.abs() < 1e-14 * span.abs() {
            let status = if saw_nonfinite_trial {
                IvpStatus::NonFinite { t }
            } else {
                IvpStatus::StepLimitExceeded
            };
            return finish(status, next, nfev, steps, states);
        }
        let last = t + 1.01 * h >= t_end;
        let h_step = if last { t_end - t } else { h };

        // Stages 2..6.
        for s in 0..5 {
            for i in 0..n {
                let mut acc = A[s][0] * k[0][i];
                for (j, k_j) in k.iter().enumerate().take(s + 1).skip(1) {
                    acc += A[s][j] * k_j[i];
                }
                y_stage[i] = y[i] + h_step * acc;
            }
            let (_, tail) = k.split_at_mut(s + 1);
            rhs.eval(t + C[s] * h_step, &y_stage, &mut tail[0]);
            nfev += 1;
        }
        // 5th-order solution (row 6 of A is b), then the FSAL stage.
        for i in 0..n {
            let mut acc = A[5][0] * k[0][i];
            for (j, k_j) in k.iter().enumerate().take(6).skip(1) {
                acc += A[5][j] * k_j[i];
            }
            y_new[i] = y[i] + h_step * acc;
        }
        rhs.eval(t + h_step, &y_new, &mut k[6]);
        nfev += 1;
        steps += 1;

        // Scaled RMS error of the embedded 4th-order difference.
        let mut err = 0.0;
        for i in 0..n {
            let mut e = E[0] * k[0][i];
            for (j, k_j) in k.iter().enumerate().skip(1) {
                e += E[j] * k_j[i];
            }
            let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
            err += (h_step * e / sc).powi(2);
        }
        err = (err / n as f64).sqrt();

        if !err.is_finite() {
            // A stage blew up; shrink hard and retry.
            saw_nonfinite_trial = true;
            last_rejected = true;
            h = h_step * 0.1;
            continue;
        }

        let fac11 = err.powf(EXPO1);
        let fac = (fac11 / facold.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);

        if err <= 1.0 {
            // Accepted.
            facold = err.max(1e-4);
            let t_new = if last { t_end } else { t + h_step };
            let mut cont_ready = false;
            while next < n_out {
                let tj = grid.point(next);
                let eps_t = 4.0 * f64::EPSILON * t_new.abs().max(span.abs());
                if tj > t_new + eps_t {
                    break;
                }
                if (tj - t_new).abs() <= eps_t {
                    for (i, v) in y_new.iter().enumerate() {
                        states[(i, next)] = *v;
                    }
                } else {
                    if !cont_ready {
                        build_dense(&y, &y_new, &k, h_step, &mut cont);
                        cont_ready = true;
                    }
                    let theta = ((tj - t) / h_step).clamp(0.0, 1.0);
                    for i in 0..n {
                        states[(i, next)] = eval_dense(&cont, i, theta);
                    }
                }
                let col_ok = (0..n).all(|i| states[(i, next)].is_finite())
                    && (0..guard_dims).all(|i| states[(i, next)].abs() <= controls.overflow_guard);
                if !col_ok {
                    return finish(IvpStatus::NonFinite { t: tj }, next, nfev, steps, states);
                }
                next += 1;
            }

            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6); // FSAL
            if !all_finite_guarded(&y, guard_dims, controls.overflow_guard) {
                return finish(IvpStatus::NonFinite { t }, next, nfev, steps, states);
            }
            let mut h_new = h_step / fac;
            if last_rejected {
                h_new = h_new.min(h_step);
            }
            last_rejected = false;
            h = h_new;
        } else {
            h = h_step / (fac11 / SAFE).min(1.0 / FAC_MIN);
            last_rejected = true;
        }
    }

    RawSolution { states, status: IvpStatus::Ok, valid_points: n_out, rhs_evaluations: nfev, steps }
}

fn all_finite_guarded(y: &[f64], guard_dims: usize, guard: f64) -> bool {
    y.iter().all(|v| v.is_finite()) && y[..guard_dims].iter().all(|v| v.abs() <= guard)
}

fn build_dense(y: &[f64], y_new: &[f64], k: &[Vec<f64>], h: f64, cont: &mut [Vec<f64>]) {
    let n = y.len();
    for i in 0..n {
        let ydiff = y_new[i] - y[i];
        let bspl = h * k[0][i] - ydiff;
        cont[0][i] = y[i];
        cont[1][i] = ydiff;
        cont[2][i] = bspl;
        cont[3][i] = ydiff - h * k[6][i] - bspl;
        let mut d_sum = D[0] * k[0][i];
        for (j, k_j) in k.iter().enumerate().skip(1) {
            d_sum += D[j] * k_j[i];
        }
        cont[4][i] = h * d_sum;
    }
}

fn eval_dense(cont: &[Vec<f64>], i: usize, theta: f64) -> f64 {
    let s = theta;
    let s1 = 1.0 - theta;
    cont[0][i] + s * (cont[1][i] + s1 * (cont[2][i] + s * (cont[3][i] + s1 * cont[4][i])))
}
