use super::backward::HeadGrad;
use super::forward::ForwardTrace;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct MultiheadLoss {
    /// Mean cross-entropy over labeled heads (0 when nothing is labeled).
    pub total: f64,
    /// Cross-entropy per head; 0 for unlabeled heads.
    pub per_head: Vec<f64>,
    /// Gradient of `total` with respect to each head's logits.
    pub grads: Vec<HeadGrad>,
}

/// Cross-entropy of each labeled head, averaged over the labeled heads.
/// `labels[h]` is the target class of head `h`, or `None` for unlabeled.
pub fn multihead_loss(trace: &ForwardTrace, labels: &[Option<usize>]) -> Result<MultiheadLoss> {
    if labels.len() != trace.probs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} heads",
            labels.len(),
            trace.probs.len()
        )));
    }
    let labeled = labels.iter().filter(|l| l.is_some()).count();
    let mut per_head = vec![0.0; labels.len()];
    let mut grads = vec![HeadGrad::Zero; labels.len()];
    let mut total = 0.0;
    for (h, ((label, probs), logits)) in labels.iter().zip(&trace.probs).zip(&trace.logits).enumerate() {
        let Some(class) = *label else { continue };
        let p = probs.data();
        if class >= p.len() {
            return Err(Error::InvalidArgument(format!(
                "label {class} out of range for head {h} with {} classes",
                p.len()
            )));
        }
        let loss = cross_entropy(logits.data(), class);
        per_head[h] = loss;
        total += loss;
        let scale = 1.0 / labeled as f64;
        let g: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, &pj)| scale * (pj - if j == class { 1.0 } else { 0.0 }))
            .collect();
        grads[h] = HeadGrad::Logits(Tensor::vector(g)?);
    }
    if labeled > 0 {
        total /= labeled as f64;
    }
    Ok(MultiheadLoss {
        total,
        per_head,
        grads,
    })
}

/// `−ln softmax(z)_y` as `ln(1 + Σ_{j≠y} exp(z_j − z_y))`, which stays
/// accurate to a few ulps of the result even when `p_y` is close to 1.
fn cross_entropy(logits: &[f64], class: usize) -> f64 {
    let zy = logits[class];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - zy > 30.0 {
        // the target is far from winning; shift by the max instead
        let rest: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
        return max - zy + rest.ln();
    }
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != class)
        .map(|(_, &z)| (z - zy).exp())
        .sum();
    rest.ln_1p()
}
