//! "GGW1" portable weights file.
//!
//! ```text
//! bytes 0..4   ASCII "GGW1"
//! bytes 4..8   u32 LE header length H
//! next H bytes UTF-8 JSON {format_version, latent_dim, layers: [{kind, params, tensor_shapes}]}
//! rest         every tensor as LE f32, row-major, in declaration order
//! ```
//!
//! Values are promoted to f64 on load and narrowed to f32 on save.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{GeneratorModel, Layer};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GGW1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    latent_dim: usize,
    layers: Vec<LayerHeader>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerHeader {
    kind: String,
    #[serde(default)]
    params: Value,
    #[serde(default)]
    tensor_shapes: Vec<Vec<usize>>,
}

fn layer_header(layer: &Layer) -> LayerHeader {
    let params = match layer {
        Layer::Dense { input, output, .. } => json!({ "in": input, "out": output }),
        Layer::Reshape { target } => json!({ "target_shape": target }),
        Layer::ConvTranspose {
            in_ch,
            out_ch,
            kernel,
            stride,
            ..
        } => json!({
            "in_ch": in_ch,
            "out_ch": out_ch,
            "kernel": kernel,
            "stride": stride,
            "padding": "same",
        }),
        Layer::AffineChannel { scale, .. } => json!({ "channels": scale.len() }),
        Layer::LeakyRelu { alpha } => json!({ "alpha": alpha }),
        Layer::Tanh => json!({}),
    };
    LayerHeader {
        kind: layer.kind().to_owned(),
        params,
        tensor_shapes: layer.tensor_shapes(),
    }
}

fn param_usize(h: &LayerHeader, key: &str) -> Result<usize> {
    h.params
        .get(key)
        .and_then(Value::as_u64)
        .map(|v| v as usize)
        .ok_or_else(|| Error::Format(format!("{} layer is missing integer param '{key}'", h.kind)))
}

/// Build a layer skeleton with zero tensors from its header.
fn layer_from_header(h: &LayerHeader) -> Result<Layer> {
    let layer = match h.kind.as_str() {
        "dense" => {
            let (input, output) = (param_usize(h, "in")?, param_usize(h, "out")?);
            Layer::Dense {
                input,
                output,
                weight: vec![0.0; input * output],
                bias: vec![0.0; output],
            }
        }
        "reshape" => {
            let target = h
                .params
                .get("target_shape")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(|v| v.as_u64().map(|d| d as usize)).collect::<Option<Vec<_>>>())
                .ok_or_else(|| Error::Format("reshape layer needs 'target_shape'".into()))?;
            Layer::Reshape { target }
        }
        "conv2d_transpose" => {
            let padding = h.params.get("padding").and_then(Value::as_str).unwrap_or("same");
            if padding != "same" {
                return Err(Error::Format(format!("unsupported padding '{padding}'")));
            }
            let (in_ch, out_ch) = (param_usize(h, "in_ch")?, param_usize(h, "out_ch")?);
            let (kernel, stride) = (param_usize(h, "kernel")?, param_usize(h, "stride")?);
            Layer::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                stride,
                weight: vec![0.0; kernel * kernel * out_ch * in_ch],
            }
        }
        "affine_channel" => {
            let ch = param_usize(h, "channels")?;
            Layer::AffineChannel {
                scale: vec![0.0; ch],
                shift: vec![0.0; ch],
            }
        }
        "leaky_relu" => Layer::LeakyRelu {
            alpha: h
                .params
                .get("alpha")
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Format("leaky_relu layer needs 'alpha'".into()))?,
        },
        "tanh" => Layer::Tanh,
        other => return Err(Error::Format(format!("unknown layer kind '{other}'"))),
    };
    if layer.tensor_shapes() != h.tensor_shapes {
        return Err(Error::Shape(format!(
            "{} layer declares tensor shapes {:?}, params imply {:?}",
            h.kind,
            h.tensor_shapes,
            layer.tensor_shapes()
        )));
    }
    Ok(layer)
}

pub fn encode_model(model: &GeneratorModel) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        latent_dim: model.latent_dim(),
        layers: model.layers().iter().map(layer_header).collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + header.len());
    out.extend_from_slice(MAGIC);
    out.extend((header.len() as u32).to_le_bytes());
    out.extend(header);
    for layer in model.layers() {
        for tensor in layer.tensors() {
            out.extend(tensor.iter().flat_map(|&v| (v as f32).to_le_bytes()));
        }
    }
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<GeneratorModel> {
    let magic = bytes.get(..4).ok_or(Error::Truncated {
        expected: 4,
        found: bytes.len(),
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: "GGW1".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let len_bytes = bytes.get(4..8).ok_or(Error::Truncated {
        expected: 8,
        found: bytes.len(),
    })?;
    let header_len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let header_bytes = bytes.get(8..8 + header_len).ok_or(Error::Truncated {
        expected: 8 + header_len,
        found: bytes.len(),
    })?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::Format(format!("GGW1 header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported GGW1 format_version {}",
            header.format_version
        )));
    }

    let mut layers = header
        .layers
        .iter()
        .map(layer_from_header)
        .collect::<Result<Vec<_>>>()?;
    let payload = &bytes[8 + header_len..];
    let needed: usize = layers
        .iter()
        .flat_map(|l| l.tensors())
        .map(|t| t.len() * 4)
        .sum();
    if payload.len() < needed {
        return Err(Error::Truncated {
            expected: 8 + header_len + needed,
            found: bytes.len(),
        });
    }
    if payload.len() > needed {
        return Err(Error::Format(format!(
            "{} trailing bytes after tensor payload",
            payload.len() - needed
        )));
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    for layer in &mut layers {
        for tensor in layer.tensors_mut() {
            tensor.iter_mut().for_each(|v| *v = floats.next().expect("length checked"));
        }
    }
    GeneratorModel::new(header.latent_dim, layers)
}

pub fn load_model(path: &Path) -> Result<GeneratorModel> {
    decode_model(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_model(model: &GeneratorModel, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bytes(payload_floats: usize) -> Vec<u8> {
        let header = br#"{"format_version":1,"latent_dim":100,"layers":[{"kind":"dense","params":{"in":100,"out":4},"tensor_shapes":[[100,4],[4]]},{"kind":"tanh","params":{},"tensor_shapes":[]}]}"#;
        let mut b = b"GGW1".to_vec();
        b.extend((header.len() as u32).to_le_bytes());
        b.extend_from_slice(header);
        b.extend(vec![0u8; payload_floats * 4]);
        b
    }

    #[test]
    fn dense_tanh_fixture() {
        let model = decode_model(&tiny_bytes(404)).unwrap();
        assert_eq!(model.output_len(), 4);
        let out = model.forward(&[1.0; 100]).unwrap();
        assert_eq!(out.values, vec![0.0; 4]);
    }

    #[test]
    fn distinct_format_errors() {
        let mut bad = tiny_bytes(404);
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_model(&tiny_bytes(15)), Err(Error::Truncated { .. })));
        assert!(matches!(decode_model(&tiny_bytes(405)), Err(Error::Format(_))));
        assert!(matches!(decode_model(b"GGW1\xff\0\0\0{}"), Err(Error::Truncated { .. })));

        let header = br#"{"format_version":1,"latent_dim":10,"layers":[{"kind":"dense","params":{"in":10,"out":4},"tensor_shapes":[[10,5],[4]]}]}"#;
        let mut b = b"GGW1".to_vec();
        b.extend((header.len() as u32).to_le_bytes());
        b.extend_from_slice(header);
        assert!(matches!(decode_model(&b), Err(Error::Shape(_))));
    }
}
