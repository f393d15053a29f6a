//! Raw little-endian `f64` arrays with a one-line JSON sidecar.
//!
//! `name.f64` holds the values, row-major. `name.json` next to it records the
//! shape plus whatever provenance produced the array (seed, cutoff, noise).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: String,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_level: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Sidecar {
    pub fn new(kind: &str, shape: Vec<usize>) -> Self {
        Self {
            kind: kind.to_owned(),
            shape,
            ..Self::default()
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "{} bytes is not a whole number of f64 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write(data_path: &Path, values: &[f64], sidecar: &Sidecar) -> Result<()> {
    if values.len() != sidecar.element_count() {
        return Err(Error::Shape(format!(
            "sidecar shape {:?} does not cover {} values",
            sidecar.shape,
            values.len()
        )));
    }
    fs::write(data_path, encode_f64(values)).map_err(|e| Error::io(data_path, e))?;
    let side = sidecar_path(data_path);
    let mut line = serde_json::to_string(sidecar)?;
    line.push('\n');
    fs::write(&side, line).map_err(|e| Error::io(&side, e))
}

pub fn read(data_path: &Path) -> Result<(Vec<f64>, Sidecar)> {
    let side = sidecar_path(data_path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_str(text.trim())?;
    let bytes = fs::read(data_path).map_err(|e| Error::io(data_path, e))?;
    let values = decode_f64(&bytes)?;
    if values.len() != sidecar.element_count() {
        return Err(Error::Truncated {
            expected: sidecar.element_count() * 8,
            found: bytes.len(),
        });
    }
    Ok((values, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_length_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.f64");
        let mut sc = Sidecar::new("matrix", vec![2, 3]);
        sc.seed = Some(5);
        sc.nu = Some(0.2);
        let vals = [1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, 1e300];
        write(&p, &vals, &sc).unwrap();
        let text = fs::read_to_string(sidecar_path(&p)).unwrap();
        assert_eq!(text.lines().count(), 1);
        let (back, sc2) = read(&p).unwrap();
        assert_eq!(back, vals);
        assert_eq!(sc2, sc);

        fs::write(&p, [0u8; 16]).unwrap();
        assert!(matches!(read(&p), Err(Error::Truncated { .. })));
        assert!(write(&p, &vals[..5], &sc).is_err());
    }
}
