//! Spectral projected gradient for `min ½‖Ax − y‖² s.t. ‖x‖₁ ≤ τ`.

use super::project::project_in_place;
use super::{BpdnConfig, SolveReport};
use crate::error::{Error, Result};
use crate::forward::MeasurementMatrix;

const STEP_MIN: f64 = 1e-10;
const STEP_MAX: f64 = 1e10;
const MEMORY: usize = 10;
const SUFFICIENT_DECREASE: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;
const ROOT_GAP_FRACTION: f64 = 1e-3;

/// Outcome of one LASSO subproblem together with its accepted objective values.
#[derive(Debug, Clone)]
pub struct LassoRun {
    pub report: SolveReport,
    /// `½‖r‖²` at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// Residual `y − Ax̂`.
    pub residual: Vec<f64>,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(a: &MeasurementMatrix, x: &[f64], y: &[f64]) -> Vec<f64> {
    a.apply(x).iter().zip(y).map(|(ax, yi)| yi - ax).collect()
}

/// Gradient of `½‖y − Ax‖²`, i.e. `−Aᵀr`.
fn gradient(a: &MeasurementMatrix, r: &[f64]) -> Vec<f64> {
    let mut g = a.apply_transpose(r);
    g.iter_mut().for_each(|v| *v = -*v);
    g
}

pub(crate) fn check_inputs(a: &MeasurementMatrix, y: &[f64]) -> Result<()> {
    if a.rows() != y.len() {
        return Err(Error::Shape(format!(
            "matrix has {} rows but signal has {} entries",
            a.rows(),
            y.len()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("measurement matrix".into()));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("signal entry {i}")));
    }
    Ok(())
}

/// Solve the l1-constrained least-squares subproblem from the zero vector.
pub fn solve_lasso(a: &MeasurementMatrix, y: &[f64], tau: f64, config: &BpdnConfig) -> Result<SolveReport> {
    Ok(solve_lasso_from(a, y, tau, &vec![0.0; a.cols()], config)?.report)
}

/// Solve the subproblem warm-started at (the projection of) `x0`.
///
/// Barzilai–Borwein step lengths clipped to `[1e-10, 1e10]`, nonmonotone
/// Armijo backtracking against the largest of the last 10 objective values.
/// Stops when `‖P(x − ∇f) − x‖₂ < opt_tol·(1 + ‖y‖₂)` or after `max_inner` steps.
pub fn solve_lasso_from(
    a: &MeasurementMatrix,
    y: &[f64],
    tau: f64,
    x0: &[f64],
    config: &BpdnConfig,
) -> Result<LassoRun> {
    check_inputs(a, y)?;
    spg(a, y, tau, x0, config, None)
}

/// Early exit used inside the Pareto root search: the subproblem only needs
/// to be solved as accurately as the current distance to the root.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RootTarget {
    pub delta: f64,
    pub pareto_tol: f64,
}

impl RootTarget {
    /// True when `‖r‖` sits on the root, or when the duality gap is small
    /// next to both `½‖r‖²` and its distance to `½δ²`. Looser fractions let
    /// inexact Newton steps overshoot the root, which for `δ = 0` leaves a
    /// feasible but not l1-minimal point.
    fn reached(&self, f: f64, gap: f64, opt_tol: f64) -> bool {
        let r_norm = (2.0 * f).sqrt();
        if (r_norm - self.delta).abs() <= self.pareto_tol {
            return true;
        }
        let distance = (f - 0.5 * self.delta * self.delta).abs();
        gap.abs() <= (opt_tol * f).max(ROOT_GAP_FRACTION * distance)
    }
}

pub(crate) fn spg(
    a: &MeasurementMatrix,
    y: &[f64],
    tau: f64,
    x0: &[f64],
    config: &BpdnConfig,
    target: Option<RootTarget>,
) -> Result<LassoRun> {
    if !(tau >= 0.0) {
        return Err(Error::arg(format!("l1 radius {tau} must be >= 0")));
    }
    if x0.len() != a.cols() {
        return Err(Error::Shape("warm start length differs from matrix columns".into()));
    }
    let tol = config.opt_tol * (1.0 + norm2(y));

    let mut x = x0.to_vec();
    project_in_place(&mut x, tau);
    let mut r = residual(a, &x, y);
    let mut f = 0.5 * r.iter().map(|v| v * v).sum::<f64>();
    let mut g = gradient(a, &r);
    let mut history = vec![f];
    let mut trace = vec![f];

    let projected_step = |x: &[f64], g: &[f64], step: f64| -> Vec<f64> {
        let mut d: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - step * gi).collect();
        project_in_place(&mut d, tau);
        d.iter_mut().zip(x).for_each(|(di, xi)| *di -= xi);
        d
    };

    let d0 = projected_step(&x, &g, 1.0);
    let d0_inf = d0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if d0_inf > 0.0 {
        (1.0 / d0_inf).clamp(STEP_MIN, STEP_MAX)
    } else {
        1.0
    };

    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_inner {
        if let Some(t) = &target {
            // Duality gap τ‖Aᵀr‖∞ − xᵀAᵀr, with g = −Aᵀr.
            let g_inf = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let gap = tau * g_inf + x.iter().zip(&g).map(|(xi, gi)| xi * gi).sum::<f64>();
            if t.reached(f, gap, config.opt_tol) {
                converged = true;
                break;
            }
        } else if norm2(&projected_step(&x, &g, 1.0)) < tol {
            converged = true;
            break;
        }
        let d = projected_step(&x, &g, step);
        let gtd: f64 = g.iter().zip(&d).map(|(gi, di)| gi * di).sum();
        if !(gtd < 0.0) {
            // No descent left at this step length: stationary up to rounding.
            converged = gtd == 0.0 || norm2(&d) == 0.0;
            break;
        }
        let f_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let x_new: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
            let r_new = residual(a, &x_new, y);
            let f_new = 0.5 * r_new.iter().map(|v| v * v).sum::<f64>();
            if f_new <= f_ref + SUFFICIENT_DECREASE * alpha * gtd {
                accepted = Some((x_new, r_new, f_new));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, r_new, f_new)) = accepted else {
            break;
        };
        if !f_new.is_finite() {
            return Err(Error::NonFinite("lasso objective".into()));
        }
        iterations += 1;
        let g_new = gradient(a, &r_new);
        let mut sts = 0.0;
        let mut sty = 0.0;
        for i in 0..x.len() {
            let s = x_new[i] - x[i];
            sts += s * s;
            sty += s * (g_new[i] - g[i]);
        }
        step = if sty <= 0.0 {
            STEP_MAX
        } else {
            (sts / sty).clamp(STEP_MIN, STEP_MAX)
        };
        x = x_new;
        r = r_new;
        f = f_new;
        g = g_new;
        if history.len() == MEMORY {
            history.remove(0);
        }
        history.push(f);
        trace.push(f);
    }

    let residual_norm = (2.0 * f).sqrt();
    let l1_norm = x.iter().map(|v| v.abs()).sum();
    Ok(LassoRun {
        report: SolveReport {
            solution: x,
            residual_norm,
            l1_norm,
            iterations,
            converged,
            tau,
        },
        objective_trace: trace,
        residual: r,
    })
}
