//! Basis Pursuit and Basis Pursuit Denoising via Pareto-curve root finding.
//!
//! BPDN, `min ‖x‖₁ s.t. ‖Ax − y‖₂ ≤ δ`, is solved by finding the root of
//! `φ(τ) = δ` where `φ(τ) = min_{‖x‖₁ ≤ τ} ‖Ax − y‖₂` is the Pareto curve.
//! Each evaluation of `φ` is a LASSO subproblem solved by spectral projected
//! gradient; `τ` is updated by Newton steps using `φ'(τ) = −‖Aᵀr‖∞ / ‖r‖₂`.
//! Basis Pursuit is the `δ = 0` case with a tighter curve tolerance.
//!
//! `δ` is a residual *norm*, not a squared norm.

mod lasso;
mod project;

use serde::{Deserialize, Serialize};

pub use lasso::{solve_lasso, solve_lasso_from, LassoRun};
use lasso::RootTarget;
pub use project::project_l1_ball;

use crate::error::{Error, Result};
use crate::forward::MeasurementMatrix;
use crate::image::GrayImage;
use crate::metrics::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpdnConfig {
    /// Residual-norm budget δ, in the units of ‖y‖₂.
    pub delta: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub opt_tol: f64,
    /// Absolute tolerance on `|φ(τ) − δ|`; `None` means `1e-5·max(1, ‖y‖₂)`.
    pub pareto_tol: Option<f64>,
}

impl Default for BpdnConfig {
    fn default() -> Self {
        Self {
            delta: 0.0,
            max_outer: 40,
            max_inner: 10_000,
            opt_tol: 1e-6,
            pareto_tol: None,
        }
    }
}

impl BpdnConfig {
    pub fn with_delta(delta: f64) -> Self {
        Self {
            delta,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta >= 0.0) {
            return Err(Error::arg(format!("delta {} must be >= 0", self.delta)));
        }
        if !(self.opt_tol > 0.0) || self.pareto_tol.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::arg("solver tolerances must be positive"));
        }
        Ok(())
    }

    pub fn pareto_tol_for(&self, y_norm: f64) -> f64 {
        self.pareto_tol.unwrap_or(1e-5 * y_norm.max(1.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    #[serde(with = "base64_f64")]
    pub solution: Vec<f64>,
    pub residual_norm: f64,
    pub l1_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final l1 budget on the Pareto curve.
    pub tau: f64,
}

impl SolveReport {
    fn zero(n: usize, y_norm: f64, converged: bool) -> Self {
        Self {
            solution: vec![0.0; n],
            residual_norm: y_norm,
            l1_norm: 0.0,
            iterations: 0,
            converged,
            tau: 0.0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Serde adapter: `Vec<f64>` as base64 of little-endian bytes.
pub mod base64_f64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(crate::rawio::encode_f64(v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text).map_err(de::Error::custom)?;
        crate::rawio::decode_f64(&bytes).map_err(de::Error::custom)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Basis Pursuit Denoising. Never fails silently: if the curve tolerance is
/// not met within `max_outer` Newton steps the report has `converged = false`.
pub fn solve_bpdn(a: &MeasurementMatrix, y: &[f64], config: &BpdnConfig) -> Result<SolveReport> {
    bpdn_from(a, y, config, None)
}

/// Root search started at `(τ, x)` of an earlier solve on the same `(A, y)`.
fn bpdn_from(a: &MeasurementMatrix, y: &[f64], config: &BpdnConfig, start: Option<&SolveReport>) -> Result<SolveReport> {
    config.validate()?;
    lasso::check_inputs(a, y)?;
    let y_norm = norm2(y);
    let delta = config.delta;
    let tol = config.pareto_tol_for(y_norm);
    if y_norm <= delta {
        return Ok(SolveReport::zero(a.cols(), y_norm, true));
    }

    let (mut tau, mut x, mut l1_norm) = match start {
        Some(s) if s.solution.len() == a.cols() => (s.tau, s.solution.clone(), s.l1_norm),
        _ => (0.0, vec![0.0; a.cols()], 0.0),
    };
    let ax = a.apply(&x);
    let mut r: Vec<f64> = y.iter().zip(&ax).map(|(yi, v)| yi - v).collect();
    let mut phi = norm2(&r);
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..=config.max_outer {
        if (phi - delta).abs() <= tol {
            converged = true;
            break;
        }
        let dual = a
            .apply_transpose(&r)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if dual == 0.0 {
            break;
        }
        // Newton step on φ(τ) = δ.
        tau = (tau + (phi - delta) * phi / dual).max(0.0);
        let target = RootTarget { delta, pareto_tol: tol };
        let run = lasso::spg(a, y, tau, &x, config, Some(target))?;
        iterations += run.report.iterations;
        x = run.report.solution;
        l1_norm = run.report.l1_norm;
        phi = run.report.residual_norm;
        r = run.residual;
    }

    if !converged {
        log::debug!("bpdn stopped at |phi - delta| = {:e} > {:e}", (phi - delta).abs(), tol);
    }
    Ok(SolveReport {
        solution: x,
        residual_norm: phi,
        l1_norm,
        iterations,
        converged,
        tau,
    })
}

/// Basis Pursuit: BPDN with `δ = 0` and curve tolerance `1e-6·max(1, ‖y‖₂)`.
pub fn solve_bp(a: &MeasurementMatrix, y: &[f64], config: &BpdnConfig) -> Result<SolveReport> {
    let y_norm = norm2(y);
    let cfg = BpdnConfig {
        delta: 0.0,
        pareto_tol: Some(1e-6 * y_norm.max(1.0)),
        ..config.clone()
    };
    solve_bpdn(a, y, &cfg)
}

/// Best δ of a tuning sweep.
#[derive(Debug, Clone)]
pub struct DeltaChoice {
    pub delta: f64,
    /// `None` when the correlation against the truth is undefined.
    pub r: Option<f64>,
    pub report: SolveReport,
}

/// Run BPDN for every δ in `grid` and keep the one whose solution correlates
/// best with `truth`. Evaluation-only: it needs the ground truth.
pub fn tune_delta(
    a: &MeasurementMatrix,
    y: &[f64],
    truth: &GrayImage,
    grid: &[f64],
    config: &BpdnConfig,
) -> Result<DeltaChoice> {
    if grid.is_empty() {
        return Err(Error::arg("delta grid is empty"));
    }
    if truth.len() != a.cols() {
        return Err(Error::Shape("truth image does not match matrix columns".into()));
    }
    // Walk δ downwards so every solve warm-starts left of its root.
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&i, &j| grid[j].total_cmp(&grid[i]));
    let mut reports: Vec<Option<SolveReport>> = vec![None; grid.len()];
    let mut previous: Option<SolveReport> = None;
    for i in order {
        let report = bpdn_from(a, y, &BpdnConfig { delta: grid[i], ..config.clone() }, previous.as_ref())?;
        previous = Some(report.clone());
        reports[i] = Some(report);
    }

    let mut best: Option<DeltaChoice> = None;
    for (&delta, report) in grid.iter().zip(reports) {
        let report = report.expect("every grid point solved");
        let r = pearson(&report.solution, truth.pixels());
        let score = r.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| score > b.r.unwrap_or(f64::NEG_INFINITY)) {
            best = Some(DeltaChoice { delta, r, report });
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// `points` log-spaced residual budgets from `3e-4·‖y‖₂` to `0.3·‖y‖₂`.
pub fn delta_grid(y: &[f64], points: usize) -> Vec<f64> {
    let y_norm = norm2(y);
    let (lo, hi) = (-3.5f64, -0.5f64);
    match points {
        0 => Vec::new(),
        1 => vec![10f64.powf(lo) * y_norm],
        _ => (0..points)
            .map(|i| {
                let e = lo + (hi - lo) * i as f64 / (points - 1) as f64;
                10f64.powf(e) * y_norm
            })
            .collect(),
    }
}
