//! MNIST-style IDX ingestion and ground-truth sample selection.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::seed::{self, Stream};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: GrayImage,
    pub label: u8,
}

impl LabeledSample {
    pub fn new(image: GrayImage, label: u8) -> Result<Self> {
        if usize::from(label) >= NUM_CLASSES {
            return Err(Error::arg(format!("label {label} outside 0..=9")));
        }
        Ok(Self { image, label })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Truncated {
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(Error::BadMagic {
            expected: format!("{expected:#010x}"),
            found: format!("{found:#010x}"),
        });
    }
    Ok(())
}

/// Parse an IDX3 unsigned-byte image tensor. Bytes map to `v / 255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<GrayImage>> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let payload = &bytes[16..];
    if payload.len() < count * size {
        return Err(Error::Truncated {
            expected: 16 + count * size,
            found: bytes.len(),
        });
    }
    payload
        .chunks_exact(size.max(1))
        .take(count)
        .map(|chunk| GrayImage::from_bytes(cols, rows, chunk))
        .collect()
}

/// Parse an IDX1 unsigned-byte label vector; every label must be a digit class.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Truncated {
            expected: 8 + count,
            found: bytes.len(),
        });
    }
    let labels = payload[..count].to_vec();
    if let Some(bad) = labels.iter().find(|&&l| usize::from(l) >= NUM_CLASSES) {
        return Err(Error::Format(format!("label byte {bad} is not a digit class")));
    }
    Ok(labels)
}

pub fn load_idx_images(path: &Path) -> Result<Vec<GrayImage>> {
    parse_idx_images(&read_file(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read_file(path)?)
}

/// Load a companion image/label file pair.
pub fn load_labeled(images: &Path, labels: &Path) -> Result<Vec<LabeledSample>> {
    let imgs = load_idx_images(images)?;
    let labs = load_idx_labels(labels)?;
    if imgs.len() != labs.len() {
        return Err(Error::Consistency(format!(
            "{} images but {} labels",
            imgs.len(),
            labs.len()
        )));
    }
    Ok(imgs
        .into_iter()
        .zip(labs)
        .map(|(image, label)| LabeledSample { image, label })
        .collect())
}

/// Which split of a standard MNIST directory to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub fn split_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    match split {
        Split::Train => (dir.join(TRAIN_IMAGES), dir.join(TRAIN_LABELS)),
        Split::Test => (dir.join(TEST_IMAGES), dir.join(TEST_LABELS)),
    }
}

pub fn load_split(dir: &Path, split: Split) -> Result<Vec<LabeledSample>> {
    let (images, labels) = split_paths(dir, split);
    load_labeled(&images, &labels)
}

/// Serialize images as an IDX3 unsigned-byte tensor. All images must share dimensions.
pub fn encode_idx_images(images: &[GrayImage]) -> Result<Vec<u8>> {
    let (rows, cols) = images
        .first()
        .map(|i| (i.height(), i.width()))
        .unwrap_or((0, 0));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend(IMAGES_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend((rows as u32).to_be_bytes());
    out.extend((cols as u32).to_be_bytes());
    for img in images {
        if img.height() != rows || img.width() != cols {
            return Err(Error::Shape("IDX images must share dimensions".into()));
        }
        out.extend(img.to_bytes());
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: &Path, images: &[GrayImage]) -> Result<()> {
    fs::write(path, encode_idx_images(images)?).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::write(path, encode_idx_labels(labels)).map_err(|e| Error::io(path, e))
}

/// Choose one sample of every digit class uniformly at random.
///
/// The result is ordered by class and depends only on the input order and `seed`.
pub fn pick_one_per_class(samples: &[LabeledSample], seed: u64) -> Result<Vec<LabeledSample>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, s) in samples.iter().enumerate() {
        by_class
            .get_mut(usize::from(s.label))
            .ok_or_else(|| Error::arg(format!("label {} outside 0..=9", s.label)))?
            .push(i);
    }
    let mut rng = seed::rng(seed::stream(seed, Stream::Selection));
    by_class
        .iter()
        .enumerate()
        .map(|(class, idx)| {
            if idx.is_empty() {
                return Err(Error::MissingClass(class as u8));
            }
            Ok(samples[idx[rng.random_range(0..idx.len())]].clone())
        })
        .collect()
}

/// Mean fraction of pixels strictly above `threshold`.
pub fn mean_sparsity(images: &[GrayImage], threshold: f64) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::arg("mean_sparsity of an empty image list"));
    }
    if !(0.0..1.0).contains(&threshold) {
        return Err(Error::arg(format!("threshold {threshold} outside [0, 1)")));
    }
    let total: f64 = images
        .iter()
        .map(|img| {
            let on = img.pixels().iter().filter(|&&v| v > threshold).count();
            on as f64 / img.len() as f64
        })
        .sum();
    Ok(total / images.len() as f64)
}
