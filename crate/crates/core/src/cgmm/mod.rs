//! Per-attribute diagonal Gaussians over one layer's activations, combined
//! into target activations by a learned weighted sum.

mod stats;
mod weights;

use rand_distr::{Distribution, Normal};

pub use stats::{read_stats, stats_bytes, write_stats};
pub use weights::{
    attribute_sets, learn_weights, weight_gradient, weight_gradient_check, weight_objective,
    WeightFit, WeightLearning, WeightProblem,
};

use crate::data::{AttributeSchema, Dataset};
use crate::error::{Error, Result};
use crate::nn::{forward_to_layer, NetworkSpec, Parameters};
use crate::tensor::{rng, Tensor};

/// Lower bound applied to every fitted variance.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeGaussian {
    /// Per-unit mean, `[dim]`.
    pub mu: Tensor,
    /// Diagonal covariance, `[dim]`, every entry `>= VARIANCE_FLOOR`.
    pub var: Tensor,
    /// Samples the estimate is based on.
    pub count: usize,
}

impl AttributeGaussian {
    /// Placeholder for an attribute with too few positives: zero mean,
    /// floored variance.
    pub fn unusable(dim: usize, count: usize) -> Self {
        AttributeGaussian {
            mu: Tensor::zeros(&[dim]).expect("vector shape"),
            var: Tensor::full(&[dim], VARIANCE_FLOOR).expect("vector shape"),
            count,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.count >= 2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// Each `z_i` is the Gaussian's mean.
    Mean,
    /// Each `z_i` is drawn from its Gaussian.
    Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgmmModel {
    /// Trunk layer the activations come from.
    pub layer: usize,
    pub schema: AttributeSchema,
    /// One per schema attribute, in schema order.
    pub gaussians: Vec<AttributeGaussian>,
    /// One per schema attribute.
    pub weights: Vec<f64>,
    pub lambda: f64,
}

impl CgmmModel {
    /// Unit weights. Every Gaussian must have the same dimension.
    pub fn new(
        layer: usize,
        schema: AttributeSchema,
        gaussians: Vec<AttributeGaussian>,
        lambda: f64,
    ) -> Result<Self> {
        let weights = vec![1.0; gaussians.len()];
        let model = CgmmModel {
            layer,
            schema,
            gaussians,
            weights,
            lambda,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.schema.attribute_count();
        if self.gaussians.len() != n || self.weights.len() != n {
            return Err(Error::Shape(format!(
                "model has {} gaussians and {} weights for {n} attributes",
                self.gaussians.len(),
                self.weights.len()
            )));
        }
        let dim = self.dim();
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.mu.shape() != [dim] || g.var.shape() != [dim] {
                return Err(Error::Shape(format!(
                    "gaussian for {} is not a {dim}-vector",
                    self.schema.qualified_name(i)
                )));
            }
            if !g.mu.is_finite() || !g.var.is_finite() {
                return Err(Error::NonFinite(format!("gaussian for {}", self.schema.qualified_name(i))));
            }
            if g.var.min() < VARIANCE_FLOOR {
                return Err(Error::InvalidArgument(format!(
                    "variance below floor for {}",
                    self.schema.qualified_name(i)
                )));
            }
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::NonFinite("weights".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }

    /// Activation dimension.
    pub fn dim(&self) -> usize {
        self.gaussians.first().map_or(0, |g| g.mu.len())
    }

    pub fn is_usable(&self, attribute: usize) -> bool {
        self.gaussians.get(attribute).is_some_and(AttributeGaussian::is_usable)
    }

    /// Rejects empty, duplicated, out-of-range or unusable attributes.
    pub fn check_attributes(&self, attributes: &[usize]) -> Result<()> {
        if attributes.is_empty() {
            return Err(Error::InvalidArgument("attribute set is empty".into()));
        }
        for (k, &a) in attributes.iter().enumerate() {
            if a >= self.gaussians.len() {
                return Err(Error::InvalidArgument(format!("attribute index {a} out of range")));
            }
            if attributes[..k].contains(&a) {
                return Err(Error::InvalidArgument(format!(
                    "attribute {} listed twice",
                    self.schema.display_name(a)
                )));
            }
            if !self.is_usable(a) {
                return Err(Error::InvalidArgument(format!(
                    "attribute {} has fewer than 2 positive examples and cannot be used",
                    self.schema.display_name(a)
                )));
            }
        }
        Ok(())
    }
}

/// Eval-mode activations of trunk layer `layer`, one flattened vector per
/// listed image.
pub fn collect_activations(
    spec: &NetworkSpec,
    params: &Parameters,
    dataset: &Dataset,
    indices: &[usize],
    layer: usize,
) -> Result<Vec<Tensor>> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("no images to collect activations from".into()));
    }
    spec.check_layer(layer)?;
    indices
        .iter()
        .map(|&i| {
            let item = dataset.images.get(i).ok_or_else(|| {
                Error::InvalidArgument(format!("image index {i} out of range ({} images)", dataset.len()))
            })?;
            let mut trace = forward_to_layer(spec, params, &item.image, layer)?;
            Ok(trace.activations.swap_remove(layer).flatten())
        })
        .collect()
}

/// Sample mean and unbiased per-unit variance, floored at `VARIANCE_FLOOR`.
pub fn fit_gaussian(activations: &[Tensor]) -> Result<AttributeGaussian> {
    let n = activations.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples to fit, got {n}")));
    }
    let dim = activations[0].len();
    if activations.iter().any(|a| a.len() != dim) {
        return Err(Error::Shape("activation vectors differ in length".into()));
    }
    let mut mu = vec![0.0; dim];
    for a in activations {
        for (m, &x) in mu.iter_mut().zip(a.data()) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for a in activations {
        for ((v, &m), &x) in var.iter_mut().zip(&mu).zip(a.data()) {
            *v += (x - m) * (x - m);
        }
    }
    var.iter_mut()
        .for_each(|v| *v = (*v / (n - 1) as f64).max(VARIANCE_FLOOR));
    Ok(AttributeGaussian {
        mu: Tensor::vector(mu).map_err(|_| Error::NonFinite("activation mean".into()))?,
        var: Tensor::vector(var).map_err(|_| Error::NonFinite("activation variance".into()))?,
        count: n,
    })
}

/// `T = (1/|C|) Σ_{i∈C} w_i z_i`, with `z_i = μ_i` in mean mode and
/// `z_i ~ N(μ_i, diag var_i)` in sample mode (drawn in the order of
/// `attributes` from one stream seeded by `seed`).
pub fn sample_target(model: &CgmmModel, attributes: &[usize], mode: TargetMode, seed: u64) -> Result<Tensor> {
    model.check_attributes(attributes)?;
    let mut rng = rng(seed);
    let mut target = vec![0.0; model.dim()];
    for &a in attributes {
        let g = &model.gaussians[a];
        let w = model.weights[a];
        match mode {
            TargetMode::Mean => {
                for (t, &m) in target.iter_mut().zip(g.mu.data()) {
                    *t += w * m;
                }
            }
            TargetMode::Sample => {
                for ((t, &m), &v) in target.iter_mut().zip(g.mu.data()).zip(g.var.data()) {
                    let z = Normal::new(m, v.sqrt())
                        .map_err(|e| Error::InvalidArgument(format!("gaussian: {e}")))?
                        .sample(&mut rng);
                    *t += w * z;
                }
            }
        }
    }
    let scale = 1.0 / attributes.len() as f64;
    target.iter_mut().for_each(|t| *t *= scale);
    Tensor::vector(target)
}

/// Per-attribute fit summary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FitSummary {
    pub attribute: usize,
    pub count: usize,
    pub available: usize,
    pub shortfall: bool,
}

/// Draws `m` positives per attribute, collects their layer activations and
/// fits one Gaussian each. Attributes with fewer than two positives get an
/// unusable placeholder instead of failing the whole fit.
pub fn fit_model(
    spec: &NetworkSpec,
    params: &Parameters,
    dataset: &Dataset,
    layer: usize,
    m: usize,
    lambda: f64,
    seed: u64,
) -> Result<(CgmmModel, Vec<FitSummary>)> {
    spec.check_schema(&dataset.schema)?;
    spec.check_layer(layer)?;
    let dim: usize = spec.layer_shape(layer)?.iter().product();
    let sets = crate::data::select_positive_sets(dataset, &dataset.schema, m, seed)?;
    let mut gaussians = Vec::with_capacity(sets.len());
    let mut summary = Vec::with_capacity(sets.len());
    for set in &sets {
        let gaussian = if set.indices.len() >= 2 {
            fit_gaussian(&collect_activations(spec, params, dataset, &set.indices, layer)?)?
        } else {
            AttributeGaussian::unusable(dim, set.indices.len())
        };
        summary.push(FitSummary {
            attribute: set.attribute,
            count: gaussian.count,
            available: set.available,
            shortfall: set.shortfall,
        });
        gaussians.push(gaussian);
    }
    let model = CgmmModel::new(layer, dataset.schema.clone(), gaussians, lambda)?;
    Ok((model, summary))
}
