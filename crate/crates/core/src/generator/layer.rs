//! Layer kinds of a feed-forward generator and their derivatives.
//!
//! Activations are stored channels-last: a `[h, w, c]` tensor element
//! `(i, j, k)` lives at `(i·w + j)·c + k`. Flat tensors have shape `[n]`.

use crate::error::{Error, Result};

pub type Shape = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `out[o] = Σ_i x[i]·weight[i][o] + bias[o]`, weight stored `input × output`.
    Dense {
        input: usize,
        output: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    },
    Reshape {
        target: Shape,
    },
    /// Stride-`s` transposed convolution with "same" padding; weight stored
    /// `kernel × kernel × out_ch × in_ch`.
    ConvTranspose {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        weight: Vec<f64>,
    },
    /// Per-channel `scale·x + shift` (inference-time batch normalization).
    AffineChannel {
        scale: Vec<f64>,
        shift: Vec<f64>,
    },
    LeakyRelu {
        alpha: f64,
    },
    Tanh,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Reshape { .. } => "reshape",
            Layer::ConvTranspose { .. } => "conv2d_transpose",
            Layer::AffineChannel { .. } => "affine_channel",
            Layer::LeakyRelu { .. } => "leaky_relu",
            Layer::Tanh => "tanh",
        }
    }

    /// Tensors in file declaration order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight, bias],
            Layer::ConvTranspose { weight, .. } => vec![weight],
            Layer::AffineChannel { scale, shift } => vec![scale, shift],
            _ => Vec::new(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense { weight, bias, .. } => vec![weight, bias],
            Layer::ConvTranspose { weight, .. } => vec![weight],
            Layer::AffineChannel { scale, shift } => vec![scale, shift],
            _ => Vec::new(),
        }
    }

    pub fn tensor_shapes(&self) -> Vec<Shape> {
        match self {
            Layer::Dense { input, output, .. } => vec![vec![*input, *output], vec![*output]],
            Layer::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                ..
            } => vec![vec![*kernel, *kernel, *out_ch, *in_ch]],
            Layer::AffineChannel { scale, .. } => vec![vec![scale.len()], vec![scale.len()]],
            _ => Vec::new(),
        }
    }

    /// Internal consistency of the layer's own parameters.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Shape(m));
        match self {
            Layer::Dense {
                input,
                output,
                weight,
                bias,
            } => {
                if weight.len() != input * output || bias.len() != *output {
                    return bad(format!("dense {input}->{output} tensor sizes"));
                }
            }
            Layer::Reshape { target } => {
                if target.is_empty() || target.contains(&0) {
                    return bad(format!("reshape target {target:?}"));
                }
            }
            Layer::ConvTranspose {
                in_ch,
                out_ch,
                kernel,
                stride,
                weight,
            } => {
                if *stride < 1 || kernel < stride {
                    return bad(format!("conv2d_transpose needs kernel >= stride >= 1, got K={kernel} s={stride}"));
                }
                if weight.len() != kernel * kernel * out_ch * in_ch {
                    return bad("conv2d_transpose weight size".into());
                }
            }
            Layer::AffineChannel { scale, shift } => {
                if scale.len() != shift.len() || scale.is_empty() {
                    return bad("affine_channel scale/shift sizes".into());
                }
            }
            Layer::LeakyRelu { alpha } => {
                if !(*alpha > 0.0 && *alpha < 1.0) {
                    return Err(Error::arg(format!("leaky_relu alpha {alpha} outside (0,1)")));
                }
            }
            Layer::Tanh => {}
        }
        Ok(())
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Shape> {
        let numel: usize = input.iter().product();
        match self {
            Layer::Dense {
                input: n_in,
                output,
                ..
            } => {
                if numel != *n_in {
                    return Err(Error::Shape(format!(
                        "dense expects {n_in} inputs, receives {input:?}"
                    )));
                }
                Ok(vec![*output])
            }
            Layer::Reshape { target } => {
                if target.iter().product::<usize>() != numel {
                    return Err(Error::Shape(format!("cannot reshape {input:?} to {target:?}")));
                }
                Ok(target.clone())
            }
            Layer::ConvTranspose {
                in_ch,
                out_ch,
                stride,
                ..
            } => match input {
                [h, w, c] if c == in_ch => Ok(vec![h * stride, w * stride, *out_ch]),
                _ => Err(Error::Shape(format!(
                    "conv2d_transpose expects [h, w, {in_ch}], receives {input:?}"
                ))),
            },
            Layer::AffineChannel { scale, .. } => {
                if input.last() != Some(&scale.len()) {
                    return Err(Error::Shape(format!(
                        "affine_channel over {} channels, receives {input:?}",
                        scale.len()
                    )));
                }
                Ok(input.to_vec())
            }
            Layer::LeakyRelu { .. } | Layer::Tanh => Ok(input.to_vec()),
        }
    }

    pub fn forward(&self, x: &[f64], shape: &[usize]) -> Vec<f64> {
        match self {
            Layer::Dense {
                input,
                output,
                weight,
                bias,
            } => {
                let mut out = bias.clone();
                for (xi, row) in x.iter().zip(weight.chunks_exact(*output)) {
                    if *xi != 0.0 {
                        for (o, w) in out.iter_mut().zip(row) {
                            *o += xi * w;
                        }
                    }
                }
                debug_assert_eq!(x.len(), *input);
                out
            }
            Layer::Reshape { .. } => x.to_vec(),
            Layer::ConvTranspose { .. } => self.conv_transpose(x, shape),
            Layer::AffineChannel { scale, shift } => x
                .chunks_exact(scale.len())
                .flat_map(|px| {
                    px.iter()
                        .zip(scale.iter().zip(shift))
                        .map(|(v, (s, b))| s * v + b)
                })
                .collect(),
            Layer::LeakyRelu { alpha } => x.iter().map(|&v| if v > 0.0 { v } else { alpha * v }).collect(),
            Layer::Tanh => x.iter().map(|v| v.tanh()).collect(),
        }
    }

    /// Jacobian-vector product at `x` (tangent `u`), used to cross-check [`Layer::vjp`].
    pub fn jvp(&self, x: &[f64], shape: &[usize], u: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense {
                input,
                output,
                weight,
                ..
            } => Layer::Dense {
                input: *input,
                output: *output,
                weight: weight.clone(),
                bias: vec![0.0; *output],
            }
            .forward(u, shape),
            Layer::Reshape { .. } => u.to_vec(),
            Layer::ConvTranspose { .. } => self.conv_transpose(u, shape),
            Layer::AffineChannel { scale, .. } => u
                .chunks_exact(scale.len())
                .flat_map(|px| px.iter().zip(scale).map(|(v, s)| s * v))
                .collect(),
            Layer::LeakyRelu { alpha } => x
                .iter()
                .zip(u)
                .map(|(&xi, &ui)| if xi > 0.0 { ui } else { alpha * ui })
                .collect(),
            Layer::Tanh => x
                .iter()
                .zip(u)
                .map(|(xi, ui)| {
                    let t = xi.tanh();
                    (1.0 - t * t) * ui
                })
                .collect(),
        }
    }

    /// Vector-Jacobian product: pull the upstream gradient `g` (w.r.t. the
    /// output `y = forward(x)`) back to the input.
    pub fn vjp(&self, x: &[f64], y: &[f64], shape: &[usize], g: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense { output, weight, .. } => weight
                .chunks_exact(*output)
                .map(|row| row.iter().zip(g).map(|(w, gi)| w * gi).sum())
                .collect(),
            Layer::Reshape { .. } => g.to_vec(),
            Layer::ConvTranspose { .. } => self.conv_transpose_adjoint(g, shape),
            Layer::AffineChannel { scale, .. } => g
                .chunks_exact(scale.len())
                .flat_map(|px| px.iter().zip(scale).map(|(v, s)| s * v))
                .collect(),
            Layer::LeakyRelu { alpha } => x
                .iter()
                .zip(g)
                .map(|(&xi, &gi)| if xi > 0.0 { gi } else { alpha * gi })
                .collect(),
            Layer::Tanh => y.iter().zip(g).map(|(t, gi)| (1.0 - t * t) * gi).collect(),
        }
    }

    /// Scatter rule `out[i·s + a − p, j·s + b − p, oc] += Σ_ic x[i, j, ic]·W[a, b, oc, ic]`
    /// with `p = ⌊(K − s)/2⌋`; targets outside the output grid are dropped.
    fn conv_transpose(&self, x: &[f64], shape: &[usize]) -> Vec<f64> {
        let Layer::ConvTranspose {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight,
        } = self
        else {
            unreachable!()
        };
        let (h, w) = (shape[0], shape[1]);
        let (ho, wo) = (h * stride, w * stride);
        let pad = (kernel - stride) / 2;
        let mut out = vec![0.0; ho * wo * out_ch];
        for i in 0..h {
            for j in 0..w {
                let xin = &x[(i * w + j) * in_ch..(i * w + j + 1) * in_ch];
                for a in 0..*kernel {
                    let Some(ti) = (i * stride + a).checked_sub(pad).filter(|&t| t < ho) else {
                        continue;
                    };
                    for b in 0..*kernel {
                        let Some(tj) = (j * stride + b).checked_sub(pad).filter(|&t| t < wo) else {
                            continue;
                        };
                        let tap = &weight[(a * kernel + b) * out_ch * in_ch..(a * kernel + b + 1) * out_ch * in_ch];
                        let dst = &mut out[(ti * wo + tj) * out_ch..(ti * wo + tj + 1) * out_ch];
                        for (o, wrow) in dst.iter_mut().zip(tap.chunks_exact(*in_ch)) {
                            *o += wrow.iter().zip(xin).map(|(wv, xv)| wv * xv).sum::<f64>();
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Layer::conv_transpose`]: a strided "same" convolution.
    fn conv_transpose_adjoint(&self, g: &[f64], shape: &[usize]) -> Vec<f64> {
        let Layer::ConvTranspose {
            in_ch,
            out_ch,
            kernel,
            stride,
            weight,
        } = self
        else {
            unreachable!()
        };
        let (h, w) = (shape[0], shape[1]);
        let (ho, wo) = (h * stride, w * stride);
        let pad = (kernel - stride) / 2;
        let mut dx = vec![0.0; h * w * in_ch];
        for i in 0..h {
            for j in 0..w {
                let acc = &mut dx[(i * w + j) * in_ch..(i * w + j + 1) * in_ch];
                for a in 0..*kernel {
                    let Some(ti) = (i * stride + a).checked_sub(pad).filter(|&t| t < ho) else {
                        continue;
                    };
                    for b in 0..*kernel {
                        let Some(tj) = (j * stride + b).checked_sub(pad).filter(|&t| t < wo) else {
                            continue;
                        };
                        let tap = &weight[(a * kernel + b) * out_ch * in_ch..(a * kernel + b + 1) * out_ch * in_ch];
                        let up = &g[(ti * wo + tj) * out_ch..(ti * wo + tj + 1) * out_ch];
                        for (gv, wrow) in up.iter().zip(tap.chunks_exact(*in_ch)) {
                            if *gv != 0.0 {
                                for (d, wv) in acc.iter_mut().zip(wrow) {
                                    *d += gv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}
