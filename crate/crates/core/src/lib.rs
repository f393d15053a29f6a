//! Compressive speckle imaging: speckle illumination, single-pixel
//! measurement, and reconstruction by l1 minimization or by descent in the
//! latent space of a pretrained generator.

pub mod cli;
pub mod dataset;
pub mod experiments;
pub mod error;
pub mod forward;
pub mod generator;
pub mod image;
pub mod l1;
pub mod metrics;
pub mod rawio;
pub mod recon;
pub mod seed;
pub mod speckle;

pub use error::{Error, Result};
pub use forward::{BucketSignal, MeasurementMatrix, NoiseSpec};
pub use generator::GeneratorModel;
pub use image::GrayImage;
pub use speckle::SpeckleConfig;
