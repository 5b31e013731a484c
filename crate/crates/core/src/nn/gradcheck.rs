//! Central finite-difference check of the analytic gradients.

use rand::seq::index::sample;

use super::backward::backward;
use super::forward::{forward, ForwardTrace, LayerCache, Mode};
use super::loss::multihead_loss;
use super::params::Parameters;
use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{rng, Tensor};

/// A checked coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coordinate {
    /// Flat index into the parameters in [`Parameters::iter`] order (weight
    /// then bias of each layer).
    Param(usize),
    Pixel(usize),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±h perturbation crossed a ReLU kink or changed a
    /// max-pool winner.
    pub skipped: usize,
    pub worst: Option<Coordinate>,
}

/// `|a − n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

fn param_slot(params: &mut Parameters, mut index: usize) -> &mut f64 {
    for layer in params.iter_mut() {
        if index < layer.weight.len() {
            return &mut layer.weight.data_mut()[index];
        }
        index -= layer.weight.len();
        if index < layer.bias.len() {
            return &mut layer.bias.data_mut()[index];
        }
        index -= layer.bias.len();
    }
    panic!("parameter index out of range")
}

fn flat_params(params: &Parameters) -> Vec<f64> {
    params
        .iter()
        .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
        .collect()
}

/// True when every ReLU keeps its sign and every pooling window its winner.
fn same_pieces(spec: &NetworkSpec, a: &ForwardTrace, b: &ForwardTrace) -> bool {
    spec.trunk.iter().enumerate().all(|(i, layer)| match layer {
        LayerSpec::Relu => a
            .layer_input(i)
            .data()
            .iter()
            .zip(b.layer_input(i).data())
            .all(|(x, y)| (*x > 0.0) == (*y > 0.0)),
        LayerSpec::MaxPool { .. } => match (&a.cache[i], &b.cache[i]) {
            (LayerCache::Argmax(x), LayerCache::Argmax(y)) => x == y,
            _ => false,
        },
        _ => true,
    })
}

/// Compares the analytic gradient of the eval-mode multi-head loss against
/// `(L(x+h) − L(x−h)) / 2h` on `sample_count` coordinates, split evenly
/// between parameters and input pixels. Coordinates whose perturbation moves
/// any ReLU across its kink (or changes a pooling winner) are skipped, since
/// the difference quotient is meaningless there.
pub fn gradient_check(
    spec: &NetworkSpec,
    params: &Parameters,
    image: &Tensor,
    labels: &[Option<usize>],
    h: f64,
    sample_count: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    if sample_count == 0 {
        return Err(Error::InvalidArgument("sample_count must be >= 1".into()));
    }
    let base = forward(spec, params, image, Mode::Eval, 0)?;
    let loss = multihead_loss(&base, labels)?;
    let grads = backward(spec, params, &base, &loss.grads)?;
    let analytic_params = flat_params(&grads.params);
    let analytic_pixels = grads.input.expect("input gradient requested");

    let n_params = analytic_params.len();
    let n_pixels = image.len();
    let pixel_share = if n_params == 0 { sample_count } else { sample_count / 2 };
    let pixel_take = pixel_share.min(n_pixels);
    let param_take = (sample_count - pixel_take).min(n_params);

    let mut rng = rng(seed);
    let mut coords: Vec<Coordinate> = sample(&mut rng, n_params, param_take)
        .into_iter()
        .map(Coordinate::Param)
        .collect();
    coords.extend(sample(&mut rng, n_pixels, pixel_take).into_iter().map(Coordinate::Pixel));

    let mut probe_params = params.clone();
    let mut probe_image = image.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        worst: None,
    };
    for coord in coords {
        let mut eval = |delta: f64| -> Result<(f64, ForwardTrace)> {
            let original = match coord {
                Coordinate::Param(i) => {
                    let slot = param_slot(&mut probe_params, i);
                    let original = *slot;
                    *slot = original + delta;
                    original
                }
                Coordinate::Pixel(i) => {
                    let slot = &mut probe_image.data_mut()[i];
                    let original = *slot;
                    *slot = original + delta;
                    original
                }
            };
            let trace = forward(spec, &probe_params, &probe_image, Mode::Eval, 0);
            match coord {
                Coordinate::Param(i) => *param_slot(&mut probe_params, i) = original,
                Coordinate::Pixel(i) => probe_image.data_mut()[i] = original,
            }
            let trace = trace?;
            Ok((multihead_loss(&trace, labels)?.total, trace))
        };
        let (plus, plus_trace) = eval(h)?;
        let (minus, minus_trace) = eval(-h)?;
        if !same_pieces(spec, &base, &plus_trace) || !same_pieces(spec, &base, &minus_trace) {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = match coord {
            Coordinate::Param(i) => analytic_params[i],
            Coordinate::Pixel(i) => analytic_pixels.data()[i],
        };
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(coord);
        }
    }
    Ok(report)
}
