//! Measurement matrix assembly, bucket-detector signals and noise injection.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::rawio::{self, Sidecar};
use crate::seed::{self, Stream};
use crate::speckle::{SpeckleConfig, SpeckleGenerator};

/// Where the rows of a measurement matrix came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    /// Row `i` is speckle pattern `i` of the stream `(seed, nu)`.
    Simulated { seed: u64, nu: f64 },
    /// Rows loaded from recorded images or an external file.
    Recorded { tag: String },
}

/// Dense `m × n` matrix whose rows are flattened illumination patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    provenance: Provenance,
    noise: Option<NoiseSpec>,
}

impl MeasurementMatrix {
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::arg("measurement matrix needs at least one row and column"));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            data,
            provenance,
            noise: None,
        })
    }

    /// Matrix from recorded pattern images. Each image is center-cropped to a
    /// square and area-resampled to `grid × grid` before flattening.
    pub fn from_images(images: &[GrayImage], grid: usize, tag: &str) -> Result<Self> {
        let rows = images
            .iter()
            .map(|img| Ok(img.center_crop_square().resize_area(grid, grid)?.into_pixels()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(
            rows.len(),
            grid * grid,
            rows.concat(),
            Provenance::Recorded { tag: tag.to_owned() },
        )
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn noise(&self) -> Option<&NoiseSpec> {
        self.noise.as_ref()
    }

    /// `A x`, one dot product per row.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `Aᵀ r`, accumulated row by row in a fixed order.
    pub fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        debug_assert_eq!(r.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &ri) in self.data.chunks_exact(self.cols).zip(r) {
            if ri != 0.0 {
                for (o, &a) in out.iter_mut().zip(row) {
                    *o += a * ri;
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy with Gaussian noise scaled to the entries' standard deviation.
    /// Draws from the matrix-noise stream of `spec.seed`.
    pub fn with_noise(&self, spec: &NoiseSpec) -> Result<Self> {
        Ok(Self {
            data: add_noise(&self.data, spec.level, seed::stream(spec.seed, Stream::MatrixNoise))?,
            noise: Some(*spec),
            ..self.clone()
        })
    }

    pub fn sidecar(&self) -> Sidecar {
        let mut sc = Sidecar::new("measurement_matrix", vec![self.rows, self.cols]);
        match &self.provenance {
            Provenance::Simulated { seed, nu } => {
                sc.seed = Some(*seed);
                sc.nu = Some(*nu);
            }
            Provenance::Recorded { tag } => sc.source = Some(tag.clone()),
        }
        if let Some(n) = &self.noise {
            sc.noise_level = Some(n.level);
            sc.noise_seed = Some(n.seed);
        }
        sc
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        rawio::write(path, &self.data, &self.sidecar())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (data, sc) = rawio::read(path)?;
        let [rows, cols] = sc.shape[..] else {
            return Err(Error::Format(format!("matrix sidecar shape {:?} is not 2-D", sc.shape)));
        };
        let provenance = match (sc.seed, sc.nu) {
            (Some(seed), Some(nu)) => Provenance::Simulated { seed, nu },
            _ => Provenance::Recorded {
                tag: sc.source.clone().unwrap_or_else(|| path.display().to_string()),
            },
        };
        let mut m = Self::from_rows(rows, cols, data, provenance)?;
        if let (Some(level), Some(seed)) = (sc.noise_level, sc.noise_seed) {
            m.noise = Some(NoiseSpec { level, seed });
        }
        Ok(m)
    }
}

/// Readings `y` of the single-pixel detector, one per pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSignal {
    values: Vec<f64>,
    noise: Option<NoiseSpec>,
}

impl BucketSignal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("bucket signal entry {i}")));
        }
        Ok(Self { values, noise: None })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn noise(&self) -> Option<&NoiseSpec> {
        self.noise.as_ref()
    }

    /// Copy with Gaussian noise; draws from the signal-noise stream of `spec.seed`.
    pub fn with_noise(&self, spec: &NoiseSpec) -> Result<Self> {
        Ok(Self {
            values: add_noise(&self.values, spec.level, seed::stream(spec.seed, Stream::SignalNoise))?,
            noise: Some(*spec),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut sc = Sidecar::new("bucket_signal", vec![self.values.len()]);
        if let Some(n) = &self.noise {
            sc.noise_level = Some(n.level);
            sc.noise_seed = Some(n.seed);
        }
        rawio::write(path, &self.values, &sc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (values, sc) = rawio::read(path)?;
        let mut s = Self::new(values)?;
        if let (Some(level), Some(seed)) = (sc.noise_level, sc.noise_seed) {
            s.noise = Some(NoiseSpec { level, seed });
        }
        Ok(s)
    }

    /// One `index,y` line per reading after a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,y\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(out, "{i},{v}");
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Noise standard deviation as a multiple of the target's own standard deviation.
    pub level: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(level: f64, seed: u64) -> Result<Self> {
        if !(level >= 0.0 && level.is_finite()) {
            return Err(Error::arg(format!("noise level {level} must be finite and >= 0")));
        }
        Ok(Self { level, seed })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// `values + ε`, `ε ~ N(0, (level·σ)²)` elementwise with σ the sample std of `values`.
pub fn add_noise(values: &[f64], level: f64, stream_seed: u64) -> Result<Vec<f64>> {
    if !(level >= 0.0) {
        return Err(Error::arg(format!("noise level {level} must be >= 0")));
    }
    let sigma = level * sample_std(values);
    if sigma == 0.0 {
        return Ok(values.to_vec());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::arg(e.to_string()))?;
    let mut rng = seed::rng(stream_seed);
    Ok(values.iter().map(|v| v + normal.sample(&mut rng)).collect())
}

/// Stack `count` independent speckle patterns as matrix rows.
pub fn build_matrix(count: usize, config: &SpeckleConfig) -> Result<MeasurementMatrix> {
    if count == 0 {
        return Err(Error::arg("measurement count must be at least 1"));
    }
    let generator = SpeckleGenerator::new(*config)?;
    let n = config.grid * config.grid;
    let rows: Vec<Vec<f64>> = (0..count as u64)
        .into_par_iter()
        .map(|i| generator.pattern(i).into_pixels())
        .collect();
    MeasurementMatrix::from_rows(
        count,
        n,
        rows.concat(),
        Provenance::Simulated {
            seed: config.seed,
            nu: config.cutoff,
        },
    )
}

/// Noiseless bucket signal `y = A · flatten(x)`.
pub fn measure(matrix: &MeasurementMatrix, image: &GrayImage) -> Result<BucketSignal> {
    if matrix.cols() != image.len() {
        return Err(Error::Shape(format!(
            "matrix has {} columns but image has {} pixels",
            matrix.cols(),
            image.len()
        )));
    }
    BucketSignal::new(matrix.apply(image.pixels()))
}

/// A simulated acquisition: the (possibly noisy) matrix and signal handed to a solver.
#[derive(Debug, Clone, PartialEq)]
pub struct Acquisition {
    pub matrix: MeasurementMatrix,
    pub signal: BucketSignal,
}

/// Simulate `count` speckle measurements of `truth` at cutoff `nu`.
///
/// The clean signal is computed with the clean matrix; when `noise_level > 0`
/// both the matrix and the signal are then perturbed from independent streams,
/// and only the perturbed pair is returned.
pub fn simulate(truth: &GrayImage, count: usize, nu: f64, noise_level: f64, seed: u64) -> Result<Acquisition> {
    if truth.width() != truth.height() {
        return Err(Error::Shape("simulation needs a square ground truth".into()));
    }
    let config = SpeckleConfig::new(truth.width(), nu, seed::stream(seed, Stream::Speckle))?;
    let matrix = build_matrix(count, &config)?;
    let signal = measure(&matrix, truth)?;
    if noise_level == 0.0 {
        return Ok(Acquisition { matrix, signal });
    }
    let spec = NoiseSpec::new(noise_level, seed)?;
    Ok(Acquisition {
        matrix: matrix.with_noise(&spec)?,
        signal: signal.with_noise(&spec)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_shape_and_determinism() {
        let cfg = SpeckleConfig::new(28, 0.7, 3).unwrap();
        let a = build_matrix(100, &cfg).unwrap();
        assert_eq!((a.rows(), a.cols()), (100, 784));
        assert!(a.data().iter().all(|&v| v >= 0.0));
        assert_eq!(a, build_matrix(100, &cfg).unwrap());
        assert!(build_matrix(0, &cfg).is_err());
    }

    #[test]
    fn measure_basics() {
        let x = GrayImage::new(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let ones = MeasurementMatrix::from_rows(1, 9, vec![1.0; 9], Provenance::Recorded { tag: "t".into() }).unwrap();
        assert_eq!(measure(&ones, &x).unwrap().values(), &[45.0]);

        let cfg = SpeckleConfig::new(3, 1.0, 1).unwrap();
        let a = build_matrix(4, &cfg).unwrap();
        let y = measure(&a, &GrayImage::zeros(3, 3)).unwrap();
        assert!(y.values().iter().all(|&v| v == 0.0));
        assert!(measure(&a, &GrayImage::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_noise_is_identity() {
        let v = vec![1.0, 2.0, 5.0];
        assert_eq!(add_noise(&v, 0.0, 9).unwrap(), v);
        let s = BucketSignal::new(v.clone()).unwrap();
        assert_eq!(s.with_noise(&NoiseSpec::new(0.0, 1).unwrap()).unwrap().values(), &v[..]);
        assert!(NoiseSpec::new(-0.1, 1).is_err());
    }

    #[test]
    fn matrix_and_signal_noise_streams_differ() {
        let v: Vec<f64> = (0..50).map(f64::from).collect();
        let spec = NoiseSpec::new(0.1, 4).unwrap();
        let m = MeasurementMatrix::from_rows(1, 50, v.clone(), Provenance::Recorded { tag: "t".into() })
            .unwrap()
            .with_noise(&spec)
            .unwrap();
        let s = BucketSignal::new(v.clone()).unwrap().with_noise(&spec).unwrap();
        assert_ne!(m.data(), s.values());
        // Reproducible per (seed, shape).
        assert_eq!(s, BucketSignal::new(v).unwrap().with_noise(&spec).unwrap());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SpeckleConfig::new(4, 0.5, 8).unwrap();
        let a = build_matrix(3, &cfg)
            .unwrap()
            .with_noise(&NoiseSpec::new(0.05, 2).unwrap())
            .unwrap();
        let p = dir.path().join("A.f64");
        a.save(&p).unwrap();
        assert_eq!(MeasurementMatrix::load(&p).unwrap(), a);

        let y = BucketSignal::new(vec![1.5, -2.0]).unwrap();
        let q = dir.path().join("y.f64");
        y.save(&q).unwrap();
        assert_eq!(BucketSignal::load(&q).unwrap(), y);
        assert_eq!(y.to_csv(), "index,y\n0,1.5\n1,-2\n");
    }

    #[test]
    fn recorded_images_are_cropped_and_resized() {
        let img = GrayImage::new(8, 6, vec![0.5; 48]).unwrap();
        let a = MeasurementMatrix::from_images(&[img.clone(), img], 3, "cam").unwrap();
        assert_eq!((a.rows(), a.cols()), (2, 9));
        assert!(a.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }
}
