//! Image reconstruction by latent-space descent through a fixed generator.
//!
//! Each restart draws a standard-normal latent vector from its own seed,
//! runs a fixed number of Adam steps on `‖A·(G(z)+1)/2 − y‖²`, and the restart
//! with the lowest final loss wins. Restarts run in parallel; the result does
//! not depend on their execution order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{simulate, MeasurementMatrix};
use crate::generator::{random_latent, AdamConfig, AdamState, GeneratorModel};
use crate::image::GrayImage;
use crate::metrics::pearson;
use crate::seed::{self, Stream};

/// Optional early stop when the loss stops improving.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauStop {
    pub window: usize,
    /// Stop when the loss improved by less than this fraction over `window` steps.
    pub rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconConfig {
    pub steps: usize,
    pub restarts: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    #[serde(default)]
    pub plateau: Option<PlateauStop>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            restarts: 10,
            adam: AdamConfig::default(),
            seed: 0,
            plateau: None,
        }
    }
}

impl ReconConfig {
    fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::arg("at least one restart is required"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::arg("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconResult {
    /// `(G(ẑ) + 1)/2` of the winning restart.
    #[serde(skip)]
    pub image: GrayImage,
    pub z: Vec<f64>,
    pub best_loss: f64,
    pub best_restart: usize,
    /// Final loss per restart; `None` for restarts discarded after a numeric failure.
    pub restart_losses: Vec<Option<f64>>,
    /// Loss before every step of the winning restart, then its final loss.
    pub loss_trace: Vec<f64>,
}

impl ReconResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct Trajectory {
    z: Vec<f64>,
    final_loss: f64,
    trace: Vec<f64>,
}

fn plateaued(trace: &[f64], stop: &PlateauStop) -> bool {
    if stop.window == 0 || trace.len() <= stop.window {
        return false;
    }
    let now = trace[trace.len() - 1];
    let then = trace[trace.len() - 1 - stop.window];
    then - now <= stop.rel_tol * then.abs()
}

fn descend(
    model: &GeneratorModel,
    a: &MeasurementMatrix,
    y: &[f64],
    config: &ReconConfig,
    restart: usize,
) -> Result<Trajectory> {
    let mut z = random_latent(
        model.latent_dim(),
        seed::derive(config.seed, &[Stream::Latent as u64, restart as u64]),
    );
    let mut adam = AdamState::new(z.len(), config.adam);
    let mut trace = Vec::with_capacity(config.steps + 1);
    for _ in 0..config.steps {
        let (loss, grad) = model.loss_and_gradient(&z, a, y)?;
        trace.push(loss);
        if config.plateau.is_some_and(|p| plateaued(&trace, &p)) {
            break;
        }
        adam.step(&mut z, &grad)?;
    }
    let final_loss = model.loss(&z, a, y)?;
    trace.push(final_loss);
    Ok(Trajectory { z, final_loss, trace })
}

/// Multi-restart reconstruction from `(A, y)`.
pub fn reconstruct(
    model: &GeneratorModel,
    a: &MeasurementMatrix,
    y: &[f64],
    config: &ReconConfig,
) -> Result<ReconResult> {
    config.validate()?;
    if a.cols() != model.output_len() || a.rows() != y.len() {
        return Err(Error::Shape(format!(
            "matrix {}x{}, signal {}, generator output {}",
            a.rows(),
            a.cols(),
            y.len(),
            model.output_len()
        )));
    }
    let runs: Vec<Result<Trajectory>> = (0..config.restarts)
        .into_par_iter()
        .map(|r| descend(model, a, y, config, r))
        .collect();

    let mut restart_losses = Vec::with_capacity(runs.len());
    let mut best: Option<(usize, Trajectory)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(t) => {
                restart_losses.push(Some(t.final_loss));
                if best.as_ref().is_none_or(|(_, b)| t.final_loss < b.final_loss) {
                    best = Some((r, t));
                }
            }
            Err(e) => {
                log::warn!("restart {r} discarded: {e}");
                restart_losses.push(None);
            }
        }
    }
    let (best_restart, t) = best.ok_or_else(|| Error::Reconstruction("every restart failed".into()))?;
    Ok(ReconResult {
        image: model.decode(&t.z)?,
        z: t.z,
        best_loss: t.final_loss,
        best_restart,
        restart_losses,
        loss_trace: t.trace,
    })
}

/// End-to-end simulated case: speckle matrix, measurement, optional noise,
/// reconstruction, and the correlation of the result with `truth`.
pub fn reconstruct_digit_case(
    model: &GeneratorModel,
    truth: &GrayImage,
    count: usize,
    nu: f64,
    noise_level: f64,
    seed: u64,
    config: &ReconConfig,
) -> Result<(ReconResult, Option<f64>)> {
    let acq = simulate(truth, count, nu, noise_level, seed)?;
    let cfg = ReconConfig {
        seed: seed::derive(seed, &[Stream::Latent as u64]),
        ..config.clone()
    };
    let result = reconstruct(model, &acq.matrix, acq.signal.values(), &cfg)?;
    let r = pearson(result.image.pixels(), truth.pixels());
    Ok((result, r))
}
