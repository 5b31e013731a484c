use rand::Rng as _;

use super::params::{LayerParams, Parameters};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{dot, gemm_nn, rng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Everything a forward pass produced, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Tensor,
    /// Output of each executed trunk layer. Shorter than the trunk only for
    /// partial passes from [`forward_to_layer`].
    pub activations: Vec<Tensor>,
    /// Per head, empty for partial passes.
    pub logits: Vec<Tensor>,
    pub probs: Vec<Tensor>,
    pub mode: Mode,
    pub(crate) cache: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
pub(crate) enum LayerCache {
    None,
    /// im2col matrix of the layer input, `[in·k·k, out_h·out_w]`.
    Cols(Vec<f64>),
    /// Flat input index chosen by each pooling window.
    Argmax(Vec<usize>),
    /// Inverted-dropout multipliers (0 or `1/(1-p)`).
    Mask(Vec<f64>),
}

impl ForwardTrace {
    pub fn layer_input(&self, layer: usize) -> &Tensor {
        if layer == 0 {
            &self.input
        } else {
            &self.activations[layer - 1]
        }
    }

    /// Predicted class per head, restricted to the first `real_classes[h]`
    /// classes (the trailing "unlabeled" class is never predicted).
    pub fn predictions(&self, real_classes: &[usize]) -> Vec<usize> {
        self.probs
            .iter()
            .zip(real_classes)
            .map(|(p, &k)| crate::tensor::argmax(&p.data()[..k]))
            .collect()
    }
}

pub(crate) struct ConvGeometry {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], output: &[usize], kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            in_c: input[0],
            in_h: input[1],
            in_w: input[2],
            out_h: output[1],
            out_w: output[2],
            kernel,
            stride,
            pad,
        }
    }

    pub fn rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate feeding output position `o` through kernel offset `k`.
    #[inline]
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k).checked_sub(self.pad)?;
        (pos < extent).then_some(pos)
    }

    pub fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let mut cols = vec![0.0; self.rows() * n];
        for c in 0..self.in_c {
            let plane = &input[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.in_h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.source(ox, kx, self.in_w) {
                                dst[oy * self.out_w + ox] = plane[iy * self.in_w + ix];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let n = self.cols();
        let mut out = vec![0.0; self.in_c * self.in_h * self.in_w];
        for c in 0..self.in_c {
            let plane = &mut out[c * self.in_h * self.in_w..(c + 1) * self.in_h * self.in_w];
            for ky in 0..self.kernel {
                for kx in 0..self.kernel {
                    let row = (c * self.kernel + ky) * self.kernel + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.in_h) else {
                            continue;
                        };
                        for ox in 0..self.out_w {
                            if let Some(ix) = self.source(ox, kx, self.in_w) {
                                plane[iy * self.in_w + ix] += src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

fn conv_forward(
    params: &LayerParams,
    input: &Tensor,
    out_shape: &[usize],
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, Vec<f64>) {
    let geo = ConvGeometry::new(input.shape(), out_shape, kernel, stride, pad);
    let cols = geo.im2col(input.data());
    let (m, k, n) = (out_shape[0], geo.rows(), geo.cols());
    let mut out = vec![0.0; m * n];
    for (o, bias) in params.bias.data().iter().enumerate() {
        out[o * n..(o + 1) * n].iter_mut().for_each(|v| *v = *bias);
    }
    gemm_nn(m, k, n, params.weight.data(), &cols, &mut out);
    (out, cols)
}

fn maxpool_forward(input: &Tensor, out_shape: &[usize], kernel: usize, stride: usize) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let data = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = usize::MAX;
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let idx = ch * h * w + (oy * stride + ky) * w + ox * stride + kx;
                        if best == usize::MAX || data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

pub(crate) fn dense_forward(params: &LayerParams, input: &[f64]) -> Vec<f64> {
    let n_in = input.len();
    params
        .bias
        .data()
        .iter()
        .enumerate()
        .map(|(o, b)| b + dot(&params.weight.data()[o * n_in..(o + 1) * n_in], input))
        .collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn check_inputs(spec: &NetworkSpec, image: &Tensor) -> Result<()> {
    if image.shape() != spec.input_shape() {
        return Err(Error::Shape(format!(
            "image shape {:?} does not match network input {:?}",
            image.shape(),
            spec.input
        )));
    }
    if !image.is_finite() {
        return Err(Error::NonFinite("input image".into()));
    }
    Ok(())
}

fn run_trunk(
    spec: &NetworkSpec,
    params: &Parameters,
    image: &Tensor,
    mode: Mode,
    seed: u64,
    last: usize,
) -> Result<ForwardTrace> {
    check_inputs(spec, image)?;
    if params.trunk.len() != spec.trunk.len() || params.heads.len() != spec.heads.len() {
        return Err(Error::Shape("parameters do not match the network spec".into()));
    }
    let shapes = spec.layer_shapes()?;
    let mut dropout_rng = rng(seed);
    let mut activations: Vec<Tensor> = Vec::with_capacity(last);
    let mut cache = Vec::with_capacity(last);
    for (i, layer) in spec.trunk.iter().enumerate().take(last) {
        let input = activations.last().unwrap_or(image);
        let out_shape = &shapes[i];
        let layer_params = || {
            params.trunk[i]
                .as_ref()
                .ok_or_else(|| Error::Shape(format!("missing parameters for layer {i}")))
        };
        let (data, entry) = match *layer {
            LayerSpec::Conv {
                kernel,
                stride,
                pad,
                ..
            } => {
                let (out, cols) = conv_forward(layer_params()?, input, out_shape, kernel, stride, pad);
                (out, LayerCache::Cols(cols))
            }
            LayerSpec::Relu => (
                input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                LayerCache::None,
            ),
            LayerSpec::MaxPool { kernel, stride } => {
                let (out, argmax) = maxpool_forward(input, out_shape, kernel, stride);
                (out, LayerCache::Argmax(argmax))
            }
            LayerSpec::Flatten => (input.data().to_vec(), LayerCache::None),
            LayerSpec::Dense { .. } => (dense_forward(layer_params()?, input.data()), LayerCache::None),
            LayerSpec::Dropout { p } => match mode {
                Mode::Eval => (input.data().to_vec(), LayerCache::None),
                Mode::Train => {
                    let keep = 1.0 / (1.0 - p);
                    let mask: Vec<f64> = (0..input.len())
                        .map(|_| if dropout_rng.random::<f64>() >= p { keep } else { 0.0 })
                        .collect();
                    let out = input.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
                    (out, LayerCache::Mask(mask))
                }
            },
        };
        let t = Tensor::from_vec(out_shape, data)
            .map_err(|_| Error::NonFinite(format!("activations of layer {i}")))?;
        activations.push(t);
        cache.push(entry);
    }
    Ok(ForwardTrace {
        input: image.clone(),
        activations,
        logits: Vec::new(),
        probs: Vec::new(),
        mode,
        cache,
    })
}

/// Full forward pass: every trunk activation plus each head's logits and
/// softmax. `seed` drives the dropout masks in train mode.
pub fn forward(
    spec: &NetworkSpec,
    params: &Parameters,
    image: &Tensor,
    mode: Mode,
    seed: u64,
) -> Result<ForwardTrace> {
    let mut trace = run_trunk(spec, params, image, mode, seed, spec.trunk.len())?;
    let features = trace.activations.last().unwrap_or(&trace.input).data().to_vec();
    for (h, head) in params.heads.iter().enumerate() {
        let logits = dense_forward(head, &features);
        let probs = softmax(&logits);
        trace.logits.push(Tensor::vector(logits).map_err(|_| Error::NonFinite(format!("logits of head {h}")))?);
        trace.probs.push(Tensor::vector(probs)?);
    }
    Ok(trace)
}

/// Eval-mode pass that stops after trunk layer `layer` (inclusive).
pub fn forward_to_layer(
    spec: &NetworkSpec,
    params: &Parameters,
    image: &Tensor,
    layer: usize,
) -> Result<ForwardTrace> {
    spec.check_layer(layer)?;
    run_trunk(spec, params, image, Mode::Eval, 0, layer + 1)
}
