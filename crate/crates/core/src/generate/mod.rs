//! Image synthesis by optimizing the input of a trained network: class
//! visualization, feature inversion toward target activations, and the
//! attribute-conditioned pipeline built on the cGMM.

mod regularize;
mod report;

pub use regularize::{blur, jitter, random_shift};
pub use report::{report_text, trace_csv};

use std::fmt::Write as _;

use crate::cgmm::{sample_target, CgmmModel, TargetMode};
use crate::data::AttributeSchema;
use crate::error::{Error, Result};
use crate::nn::{backward, backward_from_layer, forward, forward_to_layer, HeadGrad, Mode, NetworkSpec, Parameters};
use crate::tensor::{rng, Rng, Tensor};

/// Step halvings tried along the unshifted gradient before the optimization
/// is declared stalled.
const MAX_HALVINGS: usize = 40;
/// Halvings tried along a jittered gradient before falling back to the
/// unshifted one.
const MAX_HALVINGS_SHIFTED: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// `N(0.5, noise_std²)` per pixel, clamped to `[0, 1]`.
    Noise,
    /// The given image plus `N(0, noise_std²)` noise, clamped.
    Image(Tensor),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionConfig {
    /// Trunk layer whose activations are matched.
    pub layer: usize,
    pub iterations: usize,
    /// Largest step size; halved whenever a step would not improve the
    /// objective.
    pub step: f64,
    pub init: Init,
    pub noise_std: f64,
    /// `0` disables blurring.
    pub blur_sigma: f64,
    /// Blur after every `blur_period`-th iteration.
    pub blur_period: usize,
    /// Maximum circular shift, in pixels, applied before each gradient.
    pub jitter: usize,
    pub l2_decay: f64,
    pub seed: u64,
}

impl InversionConfig {
    pub fn new(layer: usize) -> Self {
        InversionConfig {
            layer,
            iterations: 500,
            step: 1.0,
            init: Init::Noise,
            noise_std: 0.1,
            blur_sigma: 0.5,
            blur_period: 10,
            jitter: 2,
            l2_decay: 1e-4,
            seed: 0,
        }
    }

    /// No blur, jitter or decay.
    pub fn unregularized(layer: usize) -> Self {
        InversionConfig {
            blur_sigma: 0.0,
            jitter: 0,
            l2_decay: 0.0,
            ..InversionConfig::new(layer)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::InvalidArgument(what));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be > 0, got {}", self.step));
        }
        if self.blur_period == 0 {
            return bad("blur period must be >= 1".into());
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return bad(format!("blur sigma must be >= 0, got {}", self.blur_sigma));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise stddev must be >= 0, got {}", self.noise_std));
        }
        if !(self.l2_decay >= 0.0 && self.l2_decay.is_finite()) {
            return bad(format!("l2 decay must be >= 0, got {}", self.l2_decay));
        }
        Ok(())
    }

    /// `key = value` lines describing the configuration.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        let init = match self.init {
            Init::Noise => "noise",
            Init::Image(_) => "image",
        };
        let _ = writeln!(out, "layer = {}", self.layer);
        let _ = writeln!(out, "iterations = {}", self.iterations);
        let _ = writeln!(out, "step = {}", self.step);
        let _ = writeln!(out, "init = {init}");
        let _ = writeln!(out, "noise_std = {}", self.noise_std);
        let _ = writeln!(out, "blur_sigma = {}", self.blur_sigma);
        let _ = writeln!(out, "blur_period = {}", self.blur_period);
        let _ = writeln!(out, "jitter = {}", self.jitter);
        let _ = writeln!(out, "l2_decay = {}", self.l2_decay);
        let _ = writeln!(out, "seed = {}", self.seed);
        out
    }
}

/// Classifier outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// Softmax probabilities of each head's real classes (the "unlabeled"
    /// class is left out, so rows need not sum to one).
    pub probs: Vec<Vec<f64>>,
    /// Most probable real class per head.
    pub predictions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationResult {
    /// In `[0, 1]`.
    pub image: Tensor,
    /// Objective at the start and after each executed iteration: the data
    /// term for inversion, the summed targeted softmax scores for class
    /// visualization.
    pub trace: Vec<f64>,
    /// Step size of each trace entry (`0` for the initial one).
    pub step_sizes: Vec<f64>,
    /// Executed iterations (skipped ones included); fewer than configured
    /// when the optimization stalls.
    pub iterations: usize,
    pub classification: Option<Classification>,
}

struct Descent {
    image: Tensor,
    trace: Vec<f64>,
    step_sizes: Vec<f64>,
}

/// Backtracking descent shared by all generators. `value` returns the
/// minimized objective and the quantity to record; `gradient` is evaluated on
/// the jittered image. A candidate is accepted when it lowers the objective
/// or reaches `floor`; otherwise the blur (if any) is dropped and then the
/// step halved. After an accepted step the next iteration starts from twice
/// that step, capped at the configured one.
///
/// A shifted gradient need not descend the unshifted objective, so with
/// jitter an iteration that finds no improving step is skipped rather than
/// ending the run; a long run of skips does end it.
fn descend(
    x0: Tensor,
    cfg: &InversionConfig,
    rng: &mut Rng,
    floor: f64,
    value: impl Fn(&Tensor) -> Result<(f64, f64)>,
    gradient: impl Fn(&Tensor) -> Result<Tensor>,
) -> Result<Descent> {
    let mut x = x0;
    let (mut current, recorded) = value(&x)?;
    let mut trace = vec![recorded];
    let mut step_sizes = vec![0.0];
    let mut step = cfg.step;
    for iteration in 0..cfg.iterations {
        let with_blur = cfg.blur_sigma > 0.0 && (iteration + 1) % cfg.blur_period == 0;
        let (dx, dy) = random_shift(rng, cfg.jitter);
        let mut accepted = None;
        if (dx, dy) != (0, 0) {
            let grad = jitter(&gradient(&jitter(&x, dx, dy)?)?, -dx, -dy)?;
            check_gradient(&grad, iteration)?;
            accepted = search(&x, &grad, step, MAX_HALVINGS_SHIFTED, with_blur, current, floor, cfg, &value)?;
        }
        if accepted.is_none() {
            // a shifted gradient need not descend the unshifted objective
            let grad = gradient(&x)?;
            check_gradient(&grad, iteration)?;
            accepted = search(&x, &grad, step, MAX_HALVINGS, with_blur, current, floor, cfg, &value)?;
        }
        let Some((candidate, v, r, used)) = accepted else { break };
        x = candidate;
        current = v;
        trace.push(r);
        step_sizes.push(used);
        step = (2.0 * used).min(cfg.step);
    }
    Ok(Descent {
        image: x,
        trace,
        step_sizes,
    })
}

fn check_gradient(grad: &Tensor, iteration: usize) -> Result<()> {
    if grad.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("image gradient at iteration {iteration}")))
    }
}

/// Backtracking line search along `-grad` (plus l2 decay). A rejected
/// candidate first loses its blur, then the step is halved up to `halvings`
/// times. Returns the candidate, its objective and recorded values, and the
/// step used.
#[allow(clippy::too_many_arguments)]
fn search(
    x: &Tensor,
    grad: &Tensor,
    mut step: f64,
    halvings: usize,
    mut with_blur: bool,
    current: f64,
    floor: f64,
    cfg: &InversionConfig,
    value: &impl Fn(&Tensor) -> Result<(f64, f64)>,
) -> Result<Option<(Tensor, f64, f64, f64)>> {
    let mut tries = 0;
    while tries <= halvings {
        let mut candidate = Tensor::from_vec(
            x.shape(),
            x.data()
                .iter()
                .zip(grad.data())
                .map(|(&xi, &gi)| (xi - step * (gi + cfg.l2_decay * xi)).clamp(0.0, 1.0))
                .collect(),
        )?;
        if with_blur {
            candidate = blur(&candidate, cfg.blur_sigma)?.clamp(0.0, 1.0);
        }
        let (v, r) = value(&candidate)?;
        if v < current || v <= floor {
            return Ok(Some((candidate, v, r, step)));
        }
        if with_blur {
            with_blur = false;
        } else {
            step *= 0.5;
            tries += 1;
        }
    }
    Ok(None)
}

fn initial_image(spec: &NetworkSpec, cfg: &InversionConfig, rng: &mut Rng) -> Result<Tensor> {
    let shape = spec.input_shape();
    let x = match &cfg.init {
        Init::Noise => Tensor::randn_with(shape, 0.5, cfg.noise_std, rng)?,
        Init::Image(base) => {
            if base.shape() != shape {
                return Err(Error::Shape(format!(
                    "initial image is {:?}, network expects {shape:?}",
                    base.shape()
                )));
            }
            if cfg.noise_std > 0.0 {
                base.add(&Tensor::randn_with(shape, 0.0, cfg.noise_std, rng)?)?
            } else {
                base.clone()
            }
        }
    };
    Ok(x.clamp(0.0, 1.0))
}

/// Squared distance between layer-`layer` activations of `image` and `target`.
pub fn data_term(spec: &NetworkSpec, params: &Parameters, image: &Tensor, target: &Tensor, layer: usize) -> Result<f64> {
    let trace = forward_to_layer(spec, params, image, layer)?;
    Ok(trace.activations[layer].sub(target)?.norm_sq())
}

/// Searches for an image whose activations at `cfg.layer` match `target`,
/// minimizing `‖φ(X) − T‖²` with blur, jitter and l2 decay as regularizers.
pub fn feature_invert(
    spec: &NetworkSpec,
    params: &Parameters,
    target: &Tensor,
    cfg: &InversionConfig,
) -> Result<GenerationResult> {
    cfg.validate()?;
    let layer = cfg.layer;
    let shape = spec.layer_shape(layer)?;
    if target.shape() != shape.as_slice() {
        return Err(Error::Shape(format!(
            "target is {:?}, layer {layer} produces {shape:?}",
            target.shape()
        )));
    }
    if !target.is_finite() {
        return Err(Error::NonFinite("target activations".into()));
    }
    let mut rng = rng(cfg.seed);
    let x0 = initial_image(spec, cfg, &mut rng)?;
    let descent = descend(
        x0,
        cfg,
        &mut rng,
        0.0,
        |x| {
            let d = data_term(spec, params, x, target, layer)?;
            Ok((d, d))
        },
        |x| {
            let trace = forward_to_layer(spec, params, x, layer)?;
            let d_phi = trace.activations[layer].sub(target)?.scale(2.0);
            backward_from_layer(spec, params, &trace, layer, &d_phi)
        },
    )?;
    Ok(GenerationResult {
        iterations: descent.trace.len() - 1,
        image: descent.image,
        trace: descent.trace,
        step_sizes: descent.step_sizes,
        classification: None,
    })
}

/// Inverts the activations `target_image` itself produces at `cfg.layer`.
pub fn reconstruct_from_image(
    spec: &NetworkSpec,
    params: &Parameters,
    target_image: &Tensor,
    cfg: &InversionConfig,
) -> Result<GenerationResult> {
    let mut trace = forward_to_layer(spec, params, target_image, cfg.layer)?;
    let target = trace.activations.swap_remove(cfg.layer);
    let mut result = feature_invert(spec, params, &target, cfg)?;
    result.classification = Some(classify(spec, params, &result.image)?);
    Ok(result)
}

/// Target activations from the cGMM for `attributes`, then feature
/// inversion; the result carries the classifier's view of the output.
pub fn generate_from_attributes(
    spec: &NetworkSpec,
    params: &Parameters,
    model: &CgmmModel,
    attributes: &[usize],
    mode: TargetMode,
    cfg: &InversionConfig,
) -> Result<GenerationResult> {
    if model.layer != cfg.layer {
        return Err(Error::InvalidArgument(format!(
            "model was fitted at layer {}, inversion targets layer {}",
            model.layer, cfg.layer
        )));
    }
    spec.check_schema(&model.schema)?;
    let shape = spec.layer_shape(cfg.layer)?;
    let target = sample_target(model, attributes, mode, cfg.seed)?;
    if target.len() != shape.iter().product::<usize>() {
        return Err(Error::Shape(format!(
            "model has {} units, layer {} has shape {shape:?}",
            target.len(),
            cfg.layer
        )));
    }
    let mut result = feature_invert(spec, params, &target.into_shape(&shape)?, cfg)?;
    result.classification = Some(classify(spec, params, &result.image)?);
    Ok(result)
}

/// Eval-mode classification of one image.
pub fn classify(spec: &NetworkSpec, params: &Parameters, image: &Tensor) -> Result<Classification> {
    let trace = forward(spec, params, image, Mode::Eval, 0)?;
    let real: Vec<usize> = spec.heads.iter().map(|h| h.class_count - 1).collect();
    Ok(Classification {
        predictions: trace.predictions(&real),
        probs: trace
            .probs
            .iter()
            .zip(&real)
            .map(|(p, &k)| p.data()[..k].to_vec())
            .collect(),
    })
}

/// Where class visualization injects its unit gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VisObjective {
    /// Gradient 1 at each targeted class's softmax output.
    Softmax,
    /// Gradient 1 at each targeted class's logit (plain score maximization,
    /// which does not saturate).
    Logits,
}

/// Gradient ascent on the targeted class scores starting from `mean` plus
/// noise. The trace records the summed targeted softmax probabilities.
pub fn class_visualize(
    spec: &NetworkSpec,
    params: &Parameters,
    schema: &AttributeSchema,
    mean: &Tensor,
    attributes: &[usize],
    objective: VisObjective,
    cfg: &InversionConfig,
) -> Result<GenerationResult> {
    cfg.validate()?;
    spec.check_schema(schema)?;
    if attributes.is_empty() {
        return Err(Error::InvalidArgument("no target attributes".into()));
    }
    let mut targets: Vec<Vec<usize>> = vec![Vec::new(); spec.heads.len()];
    for &a in attributes {
        if a >= schema.attribute_count() {
            return Err(Error::InvalidArgument(format!(
                "attribute index {a} out of range; valid names: {}",
                schema.valid_names().join(", ")
            )));
        }
        let r = schema.attribute(a);
        if !targets[r.group].contains(&r.class) {
            targets[r.group].push(r.class);
        }
    }
    let cfg = InversionConfig {
        init: Init::Image(mean.clone()),
        ..cfg.clone()
    };
    let score = |trace: &crate::nn::ForwardTrace, use_logits: bool| -> f64 {
        targets
            .iter()
            .enumerate()
            .flat_map(|(h, cs)| {
                let row = if use_logits { &trace.logits[h] } else { &trace.probs[h] };
                cs.iter().map(move |&c| row.data()[c])
            })
            .sum()
    };
    let mut rng = rng(cfg.seed);
    let x0 = initial_image(spec, &cfg, &mut rng)?;
    let descent = descend(
        x0,
        &cfg,
        &mut rng,
        f64::NEG_INFINITY,
        |x| {
            let trace = forward(spec, params, x, Mode::Eval, 0)?;
            let recorded = score(&trace, false);
            Ok((-score(&trace, objective == VisObjective::Logits), recorded))
        },
        |x| {
            let trace = forward(spec, params, x, Mode::Eval, 0)?;
            let grads: Vec<HeadGrad> = targets
                .iter()
                .zip(&spec.heads)
                .map(|(cs, head)| {
                    if cs.is_empty() {
                        return Ok(HeadGrad::Zero);
                    }
                    // minimizing the negated score
                    let mut g = vec![0.0; head.class_count];
                    cs.iter().for_each(|&c| g[c] = -1.0);
                    let g = Tensor::vector(g)?;
                    Ok(match objective {
                        VisObjective::Softmax => HeadGrad::Probs(g),
                        VisObjective::Logits => HeadGrad::Logits(g),
                    })
                })
                .collect::<Result<_>>()?;
            Ok(backward(spec, params, &trace, &grads)?.input.expect("input gradient"))
        },
    )?;
    Ok(GenerationResult {
        iterations: descent.trace.len() - 1,
        classification: Some(classify(spec, params, &descent.image)?),
        image: descent.image,
        trace: descent.trace,
        step_sizes: descent.step_sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LayerSpec, NetworkSpec};

    fn identity_net() -> (NetworkSpec, Parameters) {
        let spec = NetworkSpec {
            input: [3, 6, 6],
            trunk: vec![LayerSpec::Flatten],
            heads: vec![],
        };
        let params = Parameters::zeros(&spec).unwrap();
        (spec, params)
    }

    #[test]
    fn zero_iterations_return_the_start() {
        let (spec, params) = identity_net();
        let target = Tensor::full(&[108], 0.3).unwrap();
        let cfg = InversionConfig {
            iterations: 0,
            ..InversionConfig::unregularized(0)
        };
        let r = feature_invert(&spec, &params, &target, &cfg).unwrap();
        assert_eq!(r.trace.len(), 1);
        assert_eq!(r.iterations, 0);
        let mut rng = rng(0);
        assert_eq!(r.image, initial_image(&spec, &cfg, &mut rng).unwrap());
    }

    #[test]
    fn identity_surrogate_converges() {
        let (spec, params) = identity_net();
        let target = Tensor::randn(&[108], 0.5, 0.1, 3).unwrap().clamp(0.0, 1.0);
        let cfg = InversionConfig {
            iterations: 200,
            ..InversionConfig::unregularized(0)
        };
        let r = feature_invert(&spec, &params, &target, &cfg).unwrap();
        assert!(*r.trace.last().unwrap() <= 1e-8);
        assert!(r.trace.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn already_optimal_start_stays_put() {
        let (spec, params) = identity_net();
        let start = Tensor::randn(&[3, 6, 6], 0.5, 0.1, 8).unwrap().clamp(0.0, 1.0);
        let cfg = InversionConfig {
            init: Init::Image(start.clone()),
            noise_std: 0.0,
            iterations: 5,
            ..InversionConfig::unregularized(0)
        };
        let r = feature_invert(&spec, &params, &start.flatten(), &cfg).unwrap();
        assert!(r.trace.iter().all(|&d| d == 0.0));
        assert_eq!(r.image, start);
    }

    #[test]
    fn rejects_bad_targets_and_configs() {
        let (spec, params) = identity_net();
        let cfg = InversionConfig::new(0);
        assert!(feature_invert(&spec, &params, &Tensor::zeros(&[10]).unwrap(), &cfg).is_err());
        let bad = InversionConfig { step: 0.0, ..cfg.clone() };
        assert!(feature_invert(&spec, &params, &Tensor::zeros(&[108]).unwrap(), &bad).is_err());
        let bad = InversionConfig { blur_period: 0, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn regularized_runs_are_deterministic_and_in_range() {
        let (spec, params) = identity_net();
        let target = Tensor::randn(&[108], 0.5, 0.3, 4).unwrap();
        let cfg = InversionConfig {
            iterations: 30,
            blur_period: 3,
            jitter: 1,
            ..InversionConfig::new(0)
        };
        let a = feature_invert(&spec, &params, &target, &cfg).unwrap();
        let b = feature_invert(&spec, &params, &target, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.image.min() >= 0.0 && a.image.max() <= 1.0);
        assert!(a.trace.windows(2).all(|p| p[1] <= p[0]));
    }
}
