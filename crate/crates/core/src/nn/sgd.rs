use super::params::{FreezeMask, LayerParams, Parameters};
use crate::error::{Error, Result};

/// In-place update `p ← p − lr·(g + weight_decay·p)` of every unfrozen
/// parameter. Frozen trunk layers are not touched; heads are always updated.
pub fn sgd_step(
    params: &mut Parameters,
    grads: &Parameters,
    lr: f64,
    weight_decay: f64,
    freeze: &FreezeMask,
) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}")));
    }
    if !(weight_decay >= 0.0) || !weight_decay.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "weight decay must be >= 0, got {weight_decay}"
        )));
    }
    if params.trunk.len() != grads.trunk.len() || params.heads.len() != grads.heads.len() {
        return Err(Error::Shape("gradient layout does not match parameters".into()));
    }
    let param_layers = params.trunk.iter().filter(|p| p.is_some()).count();
    if freeze.frozen.len() != param_layers {
        return Err(Error::InvalidArgument(format!(
            "freeze mask has {} entries, parameters have {param_layers} layers",
            freeze.frozen.len()
        )));
    }

    let mut updates: Vec<(&mut LayerParams, &LayerParams)> = Vec::new();
    let mut frozen = freeze.frozen.iter();
    for (p, g) in params.trunk.iter_mut().zip(&grads.trunk) {
        match (p, g) {
            (Some(p), Some(g)) => {
                if !*frozen.next().expect("mask length checked") {
                    updates.push((p, g));
                }
            }
            (None, None) => {}
            _ => return Err(Error::Shape("gradient layout does not match parameters".into())),
        }
    }
    updates.extend(params.heads.iter_mut().zip(&grads.heads));

    for (p, g) in &updates {
        if p.weight.shape() != g.weight.shape() || p.bias.shape() != g.bias.shape() {
            return Err(Error::Shape("gradient shape does not match parameter".into()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
    }
    for (p, g) in updates {
        for (w, &d) in p.weight.data_mut().iter_mut().zip(g.weight.data()) {
            *w -= lr * (d + weight_decay * *w);
        }
        for (b, &d) in p.bias.data_mut().iter_mut().zip(g.bias.data()) {
            *b -= lr * (d + weight_decay * *b);
        }
    }
    Ok(())
}
