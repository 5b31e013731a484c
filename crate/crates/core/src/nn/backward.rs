use super::forward::{ConvGeometry, ForwardTrace, LayerCache, Mode};
use super::params::{FreezeMask, LayerParams, Parameters};
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{gemm_nt, gemm_tn, Tensor};

/// Upstream gradient for one head.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadGrad {
    /// The head does not contribute.
    Zero,
    /// Gradient with respect to the pre-softmax logits.
    Logits(Tensor),
    /// Gradient with respect to the softmax outputs; pushed through the
    /// softmax Jacobian before the head's dense layer.
    Probs(Tensor),
}

#[derive(Clone, Debug)]
pub struct Gradients {
    /// Same layout as the network's [`Parameters`]. Entries skipped because of
    /// freezing are left at zero.
    pub params: Parameters,
    pub input: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct BackwardOptions<'a> {
    /// Layers frozen here get no parameter gradient, and propagation stops
    /// below the lowest layer that still needs one (unless the input gradient
    /// is requested).
    pub freeze: Option<&'a FreezeMask>,
    pub input_grad: bool,
}

impl Default for BackwardOptions<'_> {
    fn default() -> Self {
        BackwardOptions {
            freeze: None,
            input_grad: true,
        }
    }
}

/// Gradients of every parameter and of the input image.
pub fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    loss_grads: &[HeadGrad],
) -> Result<Gradients> {
    backward_with(spec, params, trace, loss_grads, &BackwardOptions::default())
}

pub fn backward_with(
    spec: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    loss_grads: &[HeadGrad],
    opts: &BackwardOptions<'_>,
) -> Result<Gradients> {
    let mut grads = params.zeros_like();
    let input = backward_accumulate(spec, params, trace, loss_grads, opts, &mut grads)?;
    Ok(Gradients {
        params: grads,
        input,
    })
}

/// Like [`backward_with`], but adds the parameter gradients into `acc`
/// (which must be laid out like `params`). Returns the input gradient when
/// requested.
pub fn backward_accumulate(
    spec: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    loss_grads: &[HeadGrad],
    opts: &BackwardOptions<'_>,
    acc: &mut Parameters,
) -> Result<Option<Tensor>> {
    if trace.activations.len() != spec.trunk.len() || trace.probs.len() != spec.heads.len() {
        return Err(Error::InvalidArgument(
            "trace was not produced by a full forward pass of this network".into(),
        ));
    }
    if loss_grads.len() != spec.heads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} head gradients for {} heads",
            loss_grads.len(),
            spec.heads.len()
        )));
    }
    if acc.trunk.len() != spec.trunk.len() || acc.heads.len() != spec.heads.len() {
        return Err(Error::Shape("gradient accumulator does not match the network".into()));
    }
    if let Some(mask) = opts.freeze {
        mask.check(spec)?;
    }
    let features = trace.activations.last().unwrap_or(&trace.input);
    let mut d_features = vec![0.0; features.len()];

    for (h, upstream) in loss_grads.iter().enumerate() {
        let probs = trace.probs[h].data();
        let d_logits: Vec<f64> = match upstream {
            HeadGrad::Zero => continue,
            HeadGrad::Logits(g) => {
                expect_len(g, probs.len(), "head logit gradient")?;
                g.data().to_vec()
            }
            HeadGrad::Probs(g) => {
                expect_len(g, probs.len(), "head output gradient")?;
                let g = g.data();
                let inner: f64 = g.iter().zip(probs).map(|(a, p)| a * p).sum();
                probs.iter().zip(g).map(|(p, a)| p * (a - inner)).collect()
            }
        };
        dense_backward(
            &params.heads[h],
            features.data(),
            &d_logits,
            Some(&mut acc.heads[h]),
            Some(&mut d_features),
        );
    }

    let frozen = opts
        .freeze
        .map(|m| m.per_layer(spec))
        .unwrap_or_else(|| vec![false; spec.trunk.len()]);
    match spec.trunk.len() {
        0 => opts
            .input_grad
            .then(|| Tensor::from_vec(trace.input.shape(), d_features))
            .transpose(),
        n => backprop_trunk(
            spec,
            params,
            trace,
            n - 1,
            d_features,
            &frozen,
            opts.input_grad,
            Some(&mut acc.trunk),
        ),
    }
}

/// Gradient reaching the input image when `d_phi` is the gradient with
/// respect to the output of trunk layer `layer`. Heads are not involved and
/// no parameter gradients are formed.
pub fn backward_from_layer(
    spec: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    layer: usize,
    d_phi: &Tensor,
) -> Result<Tensor> {
    spec.check_layer(layer)?;
    if trace.activations.len() <= layer {
        return Err(Error::InvalidArgument(format!(
            "trace stops before layer {layer}"
        )));
    }
    if d_phi.shape() != trace.activations[layer].shape() {
        return Err(Error::Shape(format!(
            "gradient shape {:?} does not match layer {layer} output {:?}",
            d_phi.shape(),
            trace.activations[layer].shape()
        )));
    }
    let frozen = vec![false; spec.trunk.len()];
    let input = backprop_trunk(spec, params, trace, layer, d_phi.data().to_vec(), &frozen, true, None)?;
    Ok(input.expect("input gradient requested"))
}

fn expect_len(t: &Tensor, n: usize, what: &str) -> Result<()> {
    if t.len() != n {
        return Err(Error::Shape(format!("{what} has {} entries, expected {n}", t.len())));
    }
    Ok(())
}

/// Accumulates `y = W x + b` gradients: `dW += g xᵀ`, `db += g`, `dx += Wᵀ g`.
fn dense_backward(
    params: &LayerParams,
    x: &[f64],
    g: &[f64],
    param_grads: Option<&mut LayerParams>,
    dx: Option<&mut [f64]>,
) {
    let n_in = x.len();
    if let Some(pg) = param_grads {
        let dw = pg.weight.data_mut();
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            for (d, &xi) in dw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                *d += go * xi;
            }
        }
        for (d, &go) in pg.bias.data_mut().iter_mut().zip(g) {
            *d += go;
        }
    }
    if let Some(dx) = dx {
        let w = params.weight.data();
        for (o, &go) in g.iter().enumerate() {
            if go == 0.0 {
                continue;
            }
            for (d, &wv) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                *d += go * wv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn backprop_trunk(
    spec: &NetworkSpec,
    params: &Parameters,
    trace: &ForwardTrace,
    top: usize,
    grad_top: Vec<f64>,
    frozen: &[bool],
    want_input: bool,
    mut param_grads: Option<&mut Vec<Option<LayerParams>>>,
) -> Result<Option<Tensor>> {
    let wants_params = |i: usize| param_grads_wanted(spec, frozen, i);
    // lowest layer whose input gradient is still needed
    let stop = if want_input {
        0
    } else if param_grads.is_some() {
        match (0..=top).find(|&i| wants_params(i)) {
            Some(lowest) => lowest,
            None => return Ok(None),
        }
    } else {
        return Ok(None);
    };

    let mut grad = grad_top;
    for i in (stop..=top).rev() {
        let input = trace.layer_input(i);
        let need_dx = i > stop || want_input;
        grad = match spec.trunk[i] {
            LayerSpec::Conv {
                kernel,
                stride,
                pad,
                ..
            } => {
                let layer = params.trunk[i].as_ref().expect("conv has parameters");
                let out_shape = trace.activations[i].shape();
                let geo = ConvGeometry::new(input.shape(), out_shape, kernel, stride, pad);
                let (m, rows, n) = (out_shape[0], geo.rows(), geo.cols());
                let LayerCache::Cols(cols) = &trace.cache[i] else {
                    unreachable!("conv layers cache their im2col matrix")
                };
                if let Some(pg) = param_grads.as_deref_mut().filter(|_| wants_params(i)) {
                    let pg = pg[i].as_mut().expect("conv has parameters");
                    gemm_nt(m, n, rows, &grad, cols, pg.weight.data_mut());
                    for (o, db) in pg.bias.data_mut().iter_mut().enumerate() {
                        *db += grad[o * n..(o + 1) * n].iter().sum::<f64>();
                    }
                }
                if need_dx {
                    let mut d_cols = vec![0.0; rows * n];
                    gemm_tn(rows, m, n, layer.weight.data(), &grad, &mut d_cols);
                    geo.col2im(&d_cols)
                } else {
                    Vec::new()
                }
            }
            LayerSpec::Relu => {
                // subgradient 0 at exactly 0
                for (g, &x) in grad.iter_mut().zip(input.data()) {
                    if x <= 0.0 {
                        *g = 0.0;
                    }
                }
                grad
            }
            LayerSpec::MaxPool { .. } => {
                let LayerCache::Argmax(argmax) = &trace.cache[i] else {
                    unreachable!("pooling layers cache their argmax")
                };
                let mut dx = vec![0.0; input.len()];
                for (&src, &g) in argmax.iter().zip(&grad) {
                    dx[src] += g;
                }
                dx
            }
            LayerSpec::Flatten => grad,
            LayerSpec::Dense { .. } => {
                let layer = params.trunk[i].as_ref().expect("dense has parameters");
                let mut dx = if need_dx { vec![0.0; input.len()] } else { Vec::new() };
                let pg = param_grads
                    .as_deref_mut()
                    .filter(|_| wants_params(i))
                    .map(|pg| pg[i].as_mut().expect("dense has parameters"));
                dense_backward(layer, input.data(), &grad, pg, need_dx.then_some(dx.as_mut_slice()));
                dx
            }
            LayerSpec::Dropout { .. } => match (&trace.cache[i], trace.mode) {
                (LayerCache::Mask(mask), Mode::Train) => {
                    grad.iter().zip(mask).map(|(g, m)| g * m).collect()
                }
                _ => grad,
            },
        };
    }
    if !want_input {
        return Ok(None);
    }
    let input = Tensor::from_vec(trace.input.shape(), grad)
        .map_err(|_| Error::NonFinite("input gradient".into()))?;
    Ok(Some(input))
}

fn param_grads_wanted(spec: &NetworkSpec, frozen: &[bool], layer: usize) -> bool {
    spec.trunk[layer].has_params() && !frozen[layer]
}
