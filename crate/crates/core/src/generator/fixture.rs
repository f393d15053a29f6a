//! Deterministic random-weight generators in the deep convolutional layout.
//!
//! These stand in for a trained network in tests, benchmarks and the
//! `export-fixture` command. Every weight is rounded to f32 so that a saved
//! and reloaded fixture is bit-identical to the in-memory one.

use rand_distr::{Distribution, Normal};

use super::{GeneratorModel, Layer};
use crate::error::Result;
use crate::seed::{self, Stream};

/// Layer widths of a dense → reshape → transposed-convolution generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub latent_dim: usize,
    /// Side of the first spatial tensor after the dense layer.
    pub base_side: usize,
    /// Channel counts entering each transposed convolution; the last one emits 1 channel.
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub alpha: f64,
}

impl Architecture {
    /// The 100 → 7×7×256 → 7×7×128 → 14×14×64 → 28×28×1 layout.
    pub fn standard() -> Self {
        Self {
            latent_dim: 100,
            base_side: 7,
            channels: vec![256, 128, 64],
            strides: vec![1, 2, 2],
            kernel: 5,
            alpha: 0.3,
        }
    }

    /// Same topology with narrow layers; fast enough for thousands of descent steps.
    pub fn tiny() -> Self {
        Self {
            channels: vec![8, 8, 4],
            ..Self::standard()
        }
    }

    pub fn output_side(&self) -> usize {
        self.base_side * self.strides.iter().product::<usize>()
    }
}

fn draw(n: usize, mean: f64, std: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    let normal = Normal::new(mean, std).expect("positive std");
    (0..n).map(|_| normal.sample(rng) as f32 as f64).collect()
}

/// Random-weight model for `arch`, deterministic in `seed`.
pub fn random_model(arch: &Architecture, seed: u64) -> Result<GeneratorModel> {
    let mut rng = seed::rng(seed::stream(seed, Stream::Fixture));
    let gain = (2.0 / (1.0 + arch.alpha * arch.alpha)).sqrt();
    let c0 = arch.channels[0];
    let dense_out = arch.base_side * arch.base_side * c0;

    let mut layers = vec![
        Layer::Dense {
            input: arch.latent_dim,
            output: dense_out,
            weight: draw(arch.latent_dim * dense_out, 0.0, 1.0 / (arch.latent_dim as f64).sqrt(), &mut rng),
            bias: draw(dense_out, 0.0, 0.1, &mut rng),
        },
        Layer::Reshape {
            target: vec![arch.base_side, arch.base_side, c0],
        },
        Layer::AffineChannel {
            scale: draw(c0, 1.0, 0.1, &mut rng),
            shift: draw(c0, 0.0, 0.1, &mut rng),
        },
        Layer::LeakyRelu { alpha: arch.alpha },
    ];
    for (i, (&in_ch, &stride)) in arch.channels.iter().zip(&arch.strides).enumerate() {
        let last = i + 1 == arch.channels.len();
        let out_ch = if last { 1 } else { arch.channels[i + 1] };
        let fan_in = (in_ch * arch.kernel * arch.kernel) as f64 / (stride * stride) as f64;
        layers.push(Layer::ConvTranspose {
            in_ch,
            out_ch,
            kernel: arch.kernel,
            stride,
            weight: draw(arch.kernel * arch.kernel * out_ch * in_ch, 0.0, gain / fan_in.sqrt(), &mut rng),
        });
        if last {
            layers.push(Layer::Tanh);
        } else {
            layers.push(Layer::AffineChannel {
                scale: draw(out_ch, 1.0, 0.1, &mut rng),
                shift: draw(out_ch, 0.0, 0.1, &mut rng),
            });
            layers.push(Layer::LeakyRelu { alpha: arch.alpha });
        }
    }
    GeneratorModel::new(arch.latent_dim, layers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_layout_shapes() {
        let arch = Architecture::standard();
        assert_eq!(arch.output_side(), 28);
        let m = random_model(&Architecture::tiny(), 5).unwrap();
        assert_eq!(m.output_shape(), &[28, 28, 1]);
        assert_eq!(m.latent_dim(), 100);
        assert_eq!(m.layers().len(), 4 + 3 + 2 * 2 + 1);
    }

    #[test]
    fn seeded() {
        let a = random_model(&Architecture::tiny(), 5).unwrap();
        assert_eq!(a, random_model(&Architecture::tiny(), 5).unwrap());
        assert_ne!(a, random_model(&Architecture::tiny(), 6).unwrap());
    }
}
