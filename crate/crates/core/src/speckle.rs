//! Speckle illumination and diffraction-limited imaging.
//!
//! A speckle pattern is the intensity of a circular-Gaussian random field
//! whose spectrum has been truncated to a disk. The disk radius is the
//! normalized cutoff `nu` times the largest radial frequency present on the
//! grid, so `nu = 1` passes every coefficient and smaller values produce
//! coarser grains.

use std::fmt;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::seed::{self, Stream};

pub const DEFAULT_GRID: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleConfig {
    pub grid: usize,
    pub cutoff: f64,
    pub seed: u64,
}

impl SpeckleConfig {
    pub fn new(grid: usize, cutoff: f64, seed: u64) -> Result<Self> {
        let cfg = Self { grid, cutoff, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 {
            return Err(Error::arg("speckle grid must be positive"));
        }
        validate_cutoff(self.cutoff)
    }
}

pub fn validate_cutoff(cutoff: f64) -> Result<()> {
    if cutoff > 0.0 && cutoff <= 1.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("cutoff {cutoff} outside (0, 1]")))
    }
}

/// Square grid of complex amplitudes, row-major.
#[derive(Clone, PartialEq)]
pub struct ComplexField {
    pub grid: usize,
    pub values: Vec<Complex64>,
}

impl fmt::Debug for ComplexField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ComplexField({0}x{0})", self.grid)
    }
}

impl ComplexField {
    pub fn intensity(&self) -> GrayImage {
        GrayImage::new(
            self.grid,
            self.grid,
            self.values.iter().map(|c| c.norm_sqr()).collect(),
        )
        .expect("field is square")
    }
}

/// Signed frequency of DFT bin `k` on an `n`-point grid, in `[-n/2, n/2)`.
pub fn centered_frequency(k: usize, n: usize) -> i64 {
    if k < n.div_ceil(2) {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

/// Squared largest radial frequency on the grid (a corner bin).
fn max_radius_sq(n: usize) -> f64 {
    let half = (n / 2) as f64;
    2.0 * half * half
}

/// Pass-band membership of every DFT bin, in unshifted FFT order.
///
/// A bin is kept when its radial frequency is at most `cutoff` times the
/// maximum; bins exactly on the circle are kept.
pub fn frequency_mask(n: usize, cutoff: f64) -> Vec<bool> {
    let limit = cutoff * cutoff * max_radius_sq(n);
    let mut mask = Vec::with_capacity(n * n);
    for r in 0..n {
        let fy = centered_frequency(r, n);
        for c in 0..n {
            let fx = centered_frequency(c, n);
            mask.push(((fx * fx + fy * fy) as f64) <= limit);
        }
    }
    mask
}

/// Forward/inverse 2-D FFT plans for an `n × n` grid.
#[derive(Clone)]
pub struct Fourier2d {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Fourier2d {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    fn apply(&self, plan: &dyn Fft<f64>, data: &mut [Complex64]) {
        let n = self.n;
        for row in data.chunks_exact_mut(n) {
            plan.process(row);
        }
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for c in 0..n {
            for r in 0..n {
                column[r] = data[r * n + c];
            }
            plan.process(&mut column);
            for r in 0..n {
                data[r * n + c] = column[r];
            }
        }
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(self.forward.as_ref(), data);
    }

    /// Inverse transform including the `1/n²` factor.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(self.inverse.as_ref(), data);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|v| *v *= scale);
    }
}

/// Reusable speckle source for one `(grid, cutoff)` pair.
///
/// Pattern `i` is drawn from its own stream derived from `(seed, i)`, so
/// stacks can be generated in any order or in parallel.
#[derive(Clone)]
pub struct SpeckleGenerator {
    config: SpeckleConfig,
    mask: Vec<bool>,
    fourier: Fourier2d,
}

impl SpeckleGenerator {
    pub fn new(config: SpeckleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            mask: frequency_mask(config.grid, config.cutoff),
            fourier: Fourier2d::new(config.grid),
        })
    }

    pub fn config(&self) -> &SpeckleConfig {
        &self.config
    }

    fn draw_spectrum(&self, stream_seed: u64) -> Vec<Complex64> {
        let mut rng = seed::rng(stream_seed);
        let mut values: Vec<Complex64> = (0..self.mask.len())
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re, im)
            })
            .collect();
        self.fourier.forward(&mut values);
        for (v, &keep) in values.iter_mut().zip(&self.mask) {
            if !keep {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        values
    }

    fn pattern_seed(&self, index: u64) -> u64 {
        seed::derive(self.config.seed, &[Stream::Speckle as u64, index])
    }

    /// Masked spectrum of pattern `index`; bins outside the pass band are exactly zero.
    pub fn spectrum(&self, index: u64) -> ComplexField {
        ComplexField {
            grid: self.config.grid,
            values: self.draw_spectrum(self.pattern_seed(index)),
        }
    }

    /// Band-limited complex field of pattern `index`.
    pub fn field(&self, index: u64) -> ComplexField {
        let mut values = self.draw_spectrum(self.pattern_seed(index));
        self.fourier.inverse(&mut values);
        ComplexField {
            grid: self.config.grid,
            values,
        }
    }

    /// Unnormalized intensity of pattern `index`.
    pub fn pattern(&self, index: u64) -> GrayImage {
        self.field(index).intensity()
    }
}

/// Single speckle intensity pattern for `config`.
pub fn generate_speckle(config: &SpeckleConfig) -> Result<GrayImage> {
    Ok(SpeckleGenerator::new(*config)?.pattern(0))
}

/// Ideal low-pass filter: zero every DFT bin outside the cutoff disk and keep the real part.
pub fn low_pass(image: &GrayImage, cutoff: f64) -> Result<GrayImage> {
    validate_cutoff(cutoff)?;
    let n = image.width();
    if image.height() != n {
        return Err(Error::Shape(format!(
            "low-pass needs a square image, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let fourier = Fourier2d::new(n);
    let mut data: Vec<Complex64> = image
        .pixels()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fourier.forward(&mut data);
    for (v, keep) in data.iter_mut().zip(frequency_mask(n, cutoff)) {
        if !keep {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fourier.inverse(&mut data);
    GrayImage::new(n, n, data.into_iter().map(|c| c.re).collect())
}

/// Diffraction-limited rendition of `truth`. The result is unclipped; use
/// [`GrayImage::clipped`] for display.
pub fn diffraction_limited_image(truth: &GrayImage, cutoff: f64) -> Result<GrayImage> {
    low_pass(truth, cutoff)
}

/// Stack of `count` patterns sharing one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeckleStack {
    pub config: SpeckleConfig,
    pub patterns: Vec<GrayImage>,
}

impl SpeckleStack {
    pub fn generate(count: usize, config: SpeckleConfig) -> Result<Self> {
        use rayon::prelude::*;
        let generator = SpeckleGenerator::new(config)?;
        let patterns = (0..count as u64)
            .into_par_iter()
            .map(|i| generator.pattern(i))
            .collect();
        Ok(Self { config, patterns })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_frequencies() {
        let f: Vec<i64> = (0..6).map(|k| centered_frequency(k, 6)).collect();
        assert_eq!(f, vec![0, 1, 2, -3, -2, -1]);
        let g: Vec<i64> = (0..5).map(|k| centered_frequency(k, 5)).collect();
        assert_eq!(g, vec![0, 1, 2, -2, -1]);
    }

    #[test]
    fn full_cutoff_keeps_every_bin() {
        assert!(frequency_mask(28, 1.0).iter().all(|&k| k));
        assert!(frequency_mask(5, 1.0).iter().all(|&k| k));
        let m = frequency_mask(28, 0.1);
        assert!(m[0]);
        assert!(m.iter().filter(|&&k| k).count() < 28 * 28 / 10);
    }

    #[test]
    fn mask_is_symmetric_under_negation() {
        let n = 28;
        let m = frequency_mask(n, 0.37);
        for r in 0..n {
            for c in 0..n {
                let nr = (n - r) % n;
                let nc = (n - c) % n;
                assert_eq!(m[r * n + c], m[nr * n + nc]);
            }
        }
    }

    #[test]
    fn rejects_bad_cutoff() {
        assert!(SpeckleConfig::new(28, 0.0, 1).is_err());
        assert!(SpeckleConfig::new(28, 1.5, 1).is_err());
        assert!(low_pass(&GrayImage::zeros(4, 4), -0.1).is_err());
        assert!(low_pass(&GrayImage::zeros(4, 3), 0.5).is_err());
    }

    #[test]
    fn same_seed_same_pattern() {
        let cfg = SpeckleConfig::new(28, 0.4, 11).unwrap();
        assert_eq!(generate_speckle(&cfg).unwrap(), generate_speckle(&cfg).unwrap());
        let other = SpeckleConfig { seed: 12, ..cfg };
        assert_ne!(generate_speckle(&cfg).unwrap(), generate_speckle(&other).unwrap());
    }

    #[test]
    fn zero_and_constant_images() {
        let z = diffraction_limited_image(&GrayImage::zeros(28, 28), 0.2).unwrap();
        assert!(z.pixels().iter().all(|&v| v == 0.0));
        let c = low_pass(&GrayImage::new(8, 8, vec![0.7; 64]).unwrap(), 0.05).unwrap();
        assert!(c.pixels().iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }
}
