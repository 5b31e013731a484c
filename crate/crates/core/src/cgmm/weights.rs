//! The weight objective
//! `(1/|D|) Σ_i ‖φ_i − Φ_i‖² + λ‖w‖²`, `Φ_i = (1/|C_i|) Σ_{j∈C_i} w_j μ_j`,
//! its gradient, and full-batch descent on it.

use super::CgmmModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::relative_error;
use crate::tensor::{dot, Tensor};

/// Objective increase factor that counts as divergence when step halving is
/// disabled.
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive halvings tried before declaring that no step makes progress.
const MAX_HALVINGS: usize = 60;

fn check_inputs(model: &CgmmModel, activations: &[Tensor], sets: &[Vec<usize>]) -> Result<()> {
    if activations.is_empty() {
        return Err(Error::InvalidArgument("no images in the weight objective".into()));
    }
    if activations.len() != sets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} activation vectors but {} attribute sets",
            activations.len(),
            sets.len()
        )));
    }
    let dim = model.dim();
    for (i, (phi, set)) in activations.iter().zip(sets).enumerate() {
        if phi.len() != dim {
            return Err(Error::Shape(format!(
                "activation {i} has {} units, model has {dim}",
                phi.len()
            )));
        }
        model
            .check_attributes(set)
            .map_err(|e| Error::InvalidArgument(format!("attribute set of image {i}: {e}")))?;
    }
    Ok(())
}

fn combined_target(model: &CgmmModel, weights: &[f64], set: &[usize]) -> Vec<f64> {
    let mut target = vec![0.0; model.dim()];
    let scale = 1.0 / set.len() as f64;
    for &j in set {
        let w = weights[j] * scale;
        for (t, &m) in target.iter_mut().zip(model.gaussians[j].mu.data()) {
            *t += w * m;
        }
    }
    target
}

/// Direct evaluation of the objective at the model's current weights.
pub fn weight_objective(model: &CgmmModel, activations: &[Tensor], sets: &[Vec<usize>]) -> Result<f64> {
    check_inputs(model, activations, sets)?;
    Ok(objective_at(model, &model.weights, activations, sets))
}

fn objective_at(model: &CgmmModel, weights: &[f64], activations: &[Tensor], sets: &[Vec<usize>]) -> f64 {
    let mut data = 0.0;
    for (phi, set) in activations.iter().zip(sets) {
        let target = combined_target(model, weights, set);
        data += phi
            .data()
            .iter()
            .zip(&target)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>();
    }
    data / activations.len() as f64 + model.lambda * dot(weights, weights)
}

/// `∂/∂w_j = (2/|D|) Σ_i 𝟙_{i,j} (1/|C_i|) ⟨Φ_i − φ_i, μ_j⟩ + 2λ w_j`,
/// evaluated directly.
pub fn weight_gradient(model: &CgmmModel, activations: &[Tensor], sets: &[Vec<usize>]) -> Result<Vec<f64>> {
    check_inputs(model, activations, sets)?;
    let n = activations.len() as f64;
    let mut grad: Vec<f64> = model.weights.iter().map(|w| 2.0 * model.lambda * w).collect();
    for (phi, set) in activations.iter().zip(sets) {
        let residual: Vec<f64> = combined_target(model, &model.weights, set)
            .iter()
            .zip(phi.data())
            .map(|(t, p)| t - p)
            .collect();
        let scale = 2.0 / (n * set.len() as f64);
        for &j in set {
            grad[j] += scale * dot(&residual, model.gaussians[j].mu.data());
        }
    }
    Ok(grad)
}

/// Largest relative error between the analytic gradient and central
/// differences of the directly evaluated objective with step `h`.
pub fn weight_gradient_check(
    model: &CgmmModel,
    activations: &[Tensor],
    sets: &[Vec<usize>],
    h: f64,
) -> Result<f64> {
    let analytic = weight_gradient(model, activations, sets)?;
    let mut weights = model.weights.clone();
    let mut worst: f64 = 0.0;
    for (j, &a) in analytic.iter().enumerate() {
        let original = weights[j];
        weights[j] = original + h;
        let plus = objective_at(model, &weights, activations, sets);
        weights[j] = original - h;
        let minus = objective_at(model, &weights, activations, sets);
        weights[j] = original;
        worst = worst.max(relative_error(a, (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}

/// The objective is quadratic in `w`: `c − 2bᵀw + wᵀAw + λwᵀw`. Precomputing
/// `A`, `b` and `c` once makes each descent step independent of `|D|`.
#[derive(Clone, Debug)]
pub struct WeightProblem {
    a: Vec<f64>,
    b: Vec<f64>,
    c: f64,
    lambda: f64,
    n: usize,
}

impl WeightProblem {
    pub fn new(model: &CgmmModel, activations: &[Tensor], sets: &[Vec<usize>]) -> Result<Self> {
        check_inputs(model, activations, sets)?;
        let n = model.weights.len();
        let inv_d = 1.0 / activations.len() as f64;
        let mus: Vec<&[f64]> = model.gaussians.iter().map(|g| g.mu.data()).collect();
        let mut gram = vec![0.0; n * n];
        for j in 0..n {
            for k in j..n {
                let g = dot(mus[j], mus[k]);
                gram[j * n + k] = g;
                gram[k * n + j] = g;
            }
        }
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        let mut c = 0.0;
        for (phi, set) in activations.iter().zip(sets) {
            let s = 1.0 / set.len() as f64;
            c += phi.norm_sq() * inv_d;
            for &j in set {
                b[j] += s * dot(phi.data(), mus[j]) * inv_d;
                for &k in set {
                    a[j * n + k] += s * s * gram[j * n + k] * inv_d;
                }
            }
        }
        Ok(WeightProblem {
            a,
            b,
            c,
            lambda: model.lambda,
            n,
        })
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let mut quad = 0.0;
        for j in 0..self.n {
            quad += w[j] * (dot(&self.a[j * self.n..(j + 1) * self.n], w) - 2.0 * self.b[j]);
        }
        self.c + quad + self.lambda * dot(w, w)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| 2.0 * (dot(&self.a[j * self.n..(j + 1) * self.n], w) - self.b[j] + self.lambda * w[j]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightLearning {
    pub lr: f64,
    pub iterations: usize,
    /// Halve the step whenever it would increase the objective. Without it,
    /// plain descent aborts once the objective exceeds 10× its initial value.
    pub halving: bool,
}

impl Default for WeightLearning {
    fn default() -> Self {
        WeightLearning {
            lr: 1e-3,
            iterations: 1000,
            halving: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightFit {
    pub weights: Vec<f64>,
    /// Objective before the first step and after each executed step.
    pub trace: Vec<f64>,
    /// Step size used by each executed step.
    pub step_sizes: Vec<f64>,
    /// Steps executed; fewer than requested when the gradient vanishes or no
    /// step size makes progress.
    pub iterations: usize,
}

/// Full-batch gradient descent on the weight objective starting from the
/// model's weights.
pub fn learn_weights(
    model: &CgmmModel,
    activations: &[Tensor],
    sets: &[Vec<usize>],
    cfg: &WeightLearning,
) -> Result<WeightFit> {
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    let problem = WeightProblem::new(model, activations, sets)?;
    let mut w = model.weights.clone();
    let mut current = problem.objective(&w);
    let initial = current;
    let mut trace = vec![current];
    let mut step_sizes = Vec::new();
    let mut lr = cfg.lr;

    'steps: for iteration in 0..cfg.iterations {
        let grad = problem.gradient(&w);
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let propose = |lr: f64| -> Vec<f64> { w.iter().zip(&grad).map(|(wj, gj)| wj - lr * gj).collect() };
        let (next, value) = if cfg.halving {
            let mut halvings = 0;
            loop {
                let candidate = propose(lr);
                let value = problem.objective(&candidate);
                if value <= current {
                    break (candidate, value);
                }
                halvings += 1;
                if halvings > MAX_HALVINGS {
                    break 'steps;
                }
                lr *= 0.5;
            }
        } else {
            let candidate = propose(lr);
            let value = problem.objective(&candidate);
            if !value.is_finite() || value > DIVERGENCE_FACTOR * initial {
                return Err(Error::Divergence(format!(
                    "weight objective reached {value:.6e} at step {} (initial {initial:.6e}); lower the learning rate",
                    iteration + 1
                )));
            }
            (candidate, value)
        };
        w = next;
        current = value;
        trace.push(value);
        step_sizes.push(lr);
    }
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("learned weights".into()));
    }
    Ok(WeightFit {
        weights: w,
        iterations: step_sizes.len(),
        trace,
        step_sizes,
    })
}

/// Labeled attributes of every image that the model can use. Images left with
/// no usable attribute are dropped; returns the kept image indices alongside
/// their sets.
pub fn attribute_sets(dataset: &Dataset, model: &CgmmModel) -> (Vec<usize>, Vec<Vec<usize>>) {
    let mut kept = Vec::new();
    let mut sets = Vec::new();
    for (i, item) in dataset.images.iter().enumerate() {
        let set: Vec<usize> = item
            .attributes(&dataset.schema)
            .into_iter()
            .filter(|&a| model.is_usable(a))
            .collect();
        if !set.is_empty() {
            kept.push(i);
            sets.push(set);
        }
    }
    (kept, sets)
}
