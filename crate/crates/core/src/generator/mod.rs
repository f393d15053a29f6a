//! Fixed-weight generator runtime: evaluation, latent gradients and Adam.
//!
//! A [`GeneratorModel`] maps a latent vector to an image in `(−1, 1)`.
//! Reconstruction works in the measurement domain `[0, 1]` through the affine
//! map `(g + 1)/2`, and the data-fit loss `‖A·x(z) − y‖²` is differentiated
//! with respect to `z` by reverse accumulation through every layer.

mod adam;
pub mod fixture;
mod format;
mod layer;

use rand_distr::{Distribution, StandardNormal};

pub use adam::{AdamConfig, AdamState};
pub use format::{decode_model, encode_model, load_model, save_model, FORMAT_VERSION, MAGIC};
pub use layer::{Layer, Shape};

use crate::error::{Error, Result};
use crate::forward::MeasurementMatrix;
use crate::image::GrayImage;
use crate::seed;

pub const DEFAULT_LATENT_DIM: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    latent_dim: usize,
    layers: Vec<Layer>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output shape.
    shapes: Vec<Shape>,
}

/// Generator output together with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub shape: Shape,
    pub values: Vec<f64>,
}

impl Activation {
    /// Interpret a `[h, w, 1]` or `[h, w]` output (or a flat square) as an image.
    pub fn to_image(&self) -> Result<GrayImage> {
        match self.shape[..] {
            [h, w, 1] | [h, w] => GrayImage::new(w, h, self.values.clone()),
            _ => GrayImage::square(self.values.clone()),
        }
    }
}

/// Forward intermediate values kept for the backward pass.
struct Tape {
    /// `values[i]` is the input of layer `i`; the last entry is the model output.
    values: Vec<Vec<f64>>,
}

impl GeneratorModel {
    /// Build a model and check that layer shapes chain from `[latent_dim]` to the output.
    pub fn new(latent_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::arg("latent dimension must be positive"));
        }
        let mut shapes = vec![vec![latent_dim]];
        for (i, layer) in layers.iter().enumerate() {
            layer
                .validate()
                .and_then(|_| layer.output_shape(shapes.last().expect("non-empty")))
                .map(|s| shapes.push(s))
                .map_err(|e| match e {
                    Error::Shape(m) => Error::Shape(format!("layer {i} ({}): {m}", layer.kind())),
                    other => other,
                })?;
        }
        Ok(Self {
            latent_dim,
            layers,
            shapes,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    /// Copy with every tensor value replaced by `f(value)`.
    pub fn map_tensors(mut self, f: impl Fn(f64) -> f64) -> Self {
        for layer in &mut self.layers {
            for t in layer.tensors_mut() {
                t.iter_mut().for_each(|v| *v = f(*v));
            }
        }
        self
    }

    /// Input shape of layer `i`.
    pub fn input_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    fn check_latent(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::Shape(format!(
                "latent vector has {} components, model expects {}",
                z.len(),
                self.latent_dim
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent vector".into()));
        }
        Ok(())
    }

    fn run(&self, z: &[f64]) -> Result<Tape> {
        self.check_latent(z)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(z.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.forward(values.last().expect("non-empty"), &self.shapes[i]);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {i} ({})", layer.kind())));
            }
            values.push(out);
        }
        Ok(Tape { values })
    }

    /// Generator-range output `G(z)`.
    pub fn forward(&self, z: &[f64]) -> Result<Activation> {
        let mut tape = self.run(z)?;
        Ok(Activation {
            shape: self.output_shape().to_vec(),
            values: tape.values.pop().expect("non-empty"),
        })
    }

    /// Measurement-domain image `(G(z) + 1)/2`.
    pub fn decode(&self, z: &[f64]) -> Result<GrayImage> {
        to_measurement_domain(&self.forward(z)?.to_image()?)
    }

    /// Pull a gradient with respect to the output back to the latent vector.
    fn backward(&self, tape: &Tape, mut grad: Vec<f64>) -> Vec<f64> {
        for (i, layer) in self.layers.iter().enumerate().rev() {
            grad = layer.vjp(&tape.values[i], &tape.values[i + 1], &self.shapes[i], &grad);
        }
        grad
    }

    /// Latent-space vector-Jacobian product `J(z)ᵀ·g` for the generator-range output.
    pub fn vjp(&self, z: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let tape = self.run(z)?;
        if g.len() != self.output_len() {
            return Err(Error::Shape("cotangent length differs from output".into()));
        }
        Ok(self.backward(&tape, g.to_vec()))
    }

    /// Data-fit loss `L(z) = ‖A·(G(z) + 1)/2 − y‖²` and its gradient `∂L/∂z`.
    pub fn loss_and_gradient(&self, z: &[f64], a: &MeasurementMatrix, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        if a.cols() != self.output_len() {
            return Err(Error::Shape(format!(
                "matrix has {} columns, generator emits {} pixels",
                a.cols(),
                self.output_len()
            )));
        }
        if a.rows() != y.len() {
            return Err(Error::Shape(format!(
                "matrix has {} rows but signal has {} entries",
                a.rows(),
                y.len()
            )));
        }
        let tape = self.run(z)?;
        let image: Vec<f64> = tape
            .values
            .last()
            .expect("non-empty")
            .iter()
            .map(|g| 0.5 * (g + 1.0))
            .collect();
        let residual: Vec<f64> = a.apply(&image).iter().zip(y).map(|(p, yi)| p - yi).collect();
        let loss: f64 = residual.iter().map(|r| r * r).sum();
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        // dL/dx = 2·Aᵀr and dx/dg = ½.
        let grad_out = a.apply_transpose(&residual);
        Ok((loss, self.backward(&tape, grad_out)))
    }

    /// Data-fit loss only.
    pub fn loss(&self, z: &[f64], a: &MeasurementMatrix, y: &[f64]) -> Result<f64> {
        if a.cols() != self.output_len() || a.rows() != y.len() {
            return Err(Error::Shape("loss operands disagree".into()));
        }
        let x: Vec<f64> = self.forward(z)?.values.iter().map(|g| 0.5 * (g + 1.0)).collect();
        Ok(a.apply(&x).iter().zip(y).map(|(p, yi)| (p - yi) * (p - yi)).sum())
    }
}

/// `(g + 1)/2` elementwise.
pub fn to_measurement_domain(g: &GrayImage) -> Result<GrayImage> {
    if let Some(v) = g.pixels().iter().find(|v| !(v.abs() <= 1.0)) {
        return Err(Error::arg(format!("generator value {v} outside [-1, 1]")));
    }
    Ok(g.map(|v| 0.5 * (v + 1.0)))
}

/// Standard-normal latent vector drawn from `seed`.
pub fn random_latent(dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}
