//! Real-valued grayscale images and their file formats.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major grid of real intensities.
///
/// Dataset images and reconstructions live in `[0, 1]`; speckle intensities
/// and unclipped solver output may leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("image dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Square image from a flattened pixel vector whose length is a perfect square.
    pub fn square(pixels: Vec<f64>) -> Result<Self> {
        let side = (pixels.len() as f64).sqrt().round() as usize;
        if side * side != pixels.len() {
            return Err(Error::Shape(format!(
                "{} pixels do not form a square image",
                pixels.len()
            )));
        }
        Self::new(side, side, pixels)
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clamp to `[0, 1]`, the range used for display and export.
    pub fn clipped(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Linear stretch of the value range onto `[0, 1]`. Constant images map to zero.
    pub fn normalized(&self) -> Self {
        let lo = self.pixels.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.pixels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        if !(span > 0.0) {
            return Self::zeros(self.width, self.height);
        }
        self.map(|v| (v - lo) / span)
    }

    /// 8-bit quantization of the clipped image.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    /// Largest centered square crop.
    pub fn center_crop_square(&self) -> Self {
        let side = self.width.min(self.height);
        let r0 = (self.height - side) / 2;
        let c0 = (self.width - side) / 2;
        let mut pixels = Vec::with_capacity(side * side);
        for r in r0..r0 + side {
            pixels.extend_from_slice(&self.pixels[r * self.width + c0..r * self.width + c0 + side]);
        }
        Self {
            width: side,
            height: side,
            pixels,
        }
    }

    /// Area-weighted resampling: every output pixel is the mean of the input
    /// area it covers, with fractional overlap weights at the borders.
    pub fn resize_area(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("resize target must be positive"));
        }
        let wx = overlap_weights(self.width, width);
        let wy = overlap_weights(self.height, height);
        let mut out = vec![0.0; width * height];
        for (oy, row_weights) in wy.iter().enumerate() {
            for (ox, col_weights) in wx.iter().enumerate() {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for &(iy, fy) in row_weights {
                    for &(ix, fx) in col_weights {
                        acc += fy * fx * self.pixels[iy * self.width + ix];
                        norm += fy * fx;
                    }
                }
                out[oy * width + ox] = acc / norm;
            }
        }
        Self::new(width, height, out)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        buf.extend(self.to_bytes());
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::GrayImage::from_raw(
            self.width as u32,
            self.height as u32,
            self.to_bytes(),
        )
        .ok_or_else(|| Error::Shape("png buffer size".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Format(format!("png export to {}: {e}", path.display())))
    }

    /// Export by extension: `.pgm` or `.png`.
    pub fn save(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => self.save_pgm(path),
            Some("png") => self.save_png(path),
            _ => Err(Error::arg(format!(
                "unsupported image extension: {}",
                path.display()
            ))),
        }
    }

    /// Read an 8-bit PGM (binary P5 or ASCII P2) or a PNG, normalized to `[0, 1]`.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
            return parse_pgm(&bytes);
        }
        let img = image::load_from_memory(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Self::from_bytes(w as usize, h as usize, img.as_raw())
    }

    /// Raw little-endian f64 pixels followed by nothing else; used for lossless dumps.
    pub fn write_raw(&self, mut w: impl Write) -> std::io::Result<()> {
        for v in &self.pixels {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let w = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let binary = bytes.starts_with(b"P5");
    // Header tokens, skipping comments.
    let mut tokens = Vec::new();
    let mut pos = 2;
    while tokens.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Format("bad PGM header token".into()))?;
        tokens.push(tok);
    }
    let (w, h, maxval) = (tokens[0], tokens[1], tokens[2]);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    let scale = maxval as f64;
    let pixels: Vec<f64> = if binary {
        let data = &bytes[(pos + 1).min(bytes.len())..];
        if data.len() < w * h {
            return Err(Error::Truncated {
                expected: w * h,
                found: data.len(),
            });
        }
        data[..w * h].iter().map(|&b| f64::from(b) / scale).collect()
    } else {
        let text = std::str::from_utf8(&bytes[pos..])
            .map_err(|_| Error::Format("non-ASCII P2 payload".into()))?;
        let vals: Vec<f64> = text
            .split_ascii_whitespace()
            .take(w * h)
            .map(|t| t.parse::<f64>().map(|v| v / scale))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format("bad P2 pixel".into()))?;
        if vals.len() < w * h {
            return Err(Error::Truncated {
                expected: w * h,
                found: vals.len(),
            });
        }
        vals
    };
    GrayImage::new(w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_rejects_non_square_lengths() {
        assert!(GrayImage::square(vec![0.0; 784]).is_ok());
        assert!(GrayImage::square(vec![0.0; 10]).is_err());
    }

    #[test]
    fn area_resize_preserves_constant_and_mean() {
        let img = GrayImage::new(6, 6, vec![0.25; 36]).unwrap();
        let small = img.resize_area(4, 4).unwrap();
        assert!(small.pixels().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let ramp = GrayImage::new(4, 4, (0..16).map(f64::from).collect()).unwrap();
        let half = ramp.resize_area(2, 2).unwrap();
        // top-left block: 0,1,4,5
        assert!((half.get(0, 0) - 2.5).abs() < 1e-12);
        let mean_in: f64 = ramp.pixels().iter().sum::<f64>() / 16.0;
        let mean_out: f64 = half.pixels().iter().sum::<f64>() / 4.0;
        assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn crop_takes_center() {
        let img = GrayImage::new(4, 2, (0..8).map(f64::from).collect()).unwrap();
        let c = img.center_crop_square();
        assert_eq!(c.pixels(), &[1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        let img = GrayImage::from_bytes(3, 2, &[0, 17, 128, 200, 254, 255]).unwrap();
        img.save_pgm(&path).unwrap();
        let back = GrayImage::load(&path).unwrap();
        assert_eq!(back.to_bytes(), img.to_bytes());

        let ascii = dir.path().join("b.pgm");
        fs::write(&ascii, "P2\n# comment\n2 1\n15\n0 15\n").unwrap();
        let b = GrayImage::load(&ascii).unwrap();
        assert_eq!(b.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = GrayImage::from_bytes(2, 2, &[0, 64, 128, 255]).unwrap();
        img.save(&path).unwrap();
        assert_eq!(GrayImage::load(&path).unwrap().to_bytes(), img.to_bytes());
    }
}
