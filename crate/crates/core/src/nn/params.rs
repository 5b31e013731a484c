use super::spec::{LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensor::{rng, Tensor};

/// Weight and bias of one parameterized layer. Conv weights are
/// `[out, in, k, k]`, dense weights `[out, in]`; biases `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    pub fn zeros_like(&self) -> LayerParams {
        LayerParams {
            weight: Tensor::zeros(self.weight.shape()).expect("existing shape"),
            bias: Tensor::zeros(self.bias.shape()).expect("existing shape"),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn scale_in_place(&mut self, factor: f64) {
        self.weight.data_mut().iter_mut().for_each(|v| *v *= factor);
        self.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    /// Indexed by trunk layer; `None` for layers without parameters.
    pub trunk: Vec<Option<LayerParams>>,
    pub heads: Vec<LayerParams>,
}

fn param_shapes(spec: &NetworkSpec) -> Result<(Vec<Option<(Vec<usize>, usize)>>, Vec<(Vec<usize>, usize)>)> {
    let shapes = spec.layer_shapes()?;
    let mut trunk = Vec::with_capacity(spec.trunk.len());
    let mut input = spec.input.to_vec();
    for (layer, out) in spec.trunk.iter().zip(&shapes) {
        trunk.push(match *layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, input[0], kernel, kernel], out_channels)),
            LayerSpec::Dense { out_units } => Some((vec![out_units, input[0]], out_units)),
            _ => None,
        });
        input = out.clone();
    }
    let features = spec.feature_size()?;
    let heads = spec
        .heads
        .iter()
        .map(|h| (vec![h.class_count, features], h.class_count))
        .collect();
    Ok((trunk, heads))
}

impl Parameters {
    /// He-normal weights (`std = sqrt(2 / fan_in)`; `sqrt(1 / fan_in)` for the
    /// heads), zero biases, drawn in layer order from one seeded stream.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let (trunk_shapes, head_shapes) = param_shapes(spec)?;
        let mut rng = rng(seed);
        let mut make = |shape: &[usize], bias: usize, gain: f64| -> Result<LayerParams> {
            let fan_in: usize = shape[1..].iter().product();
            let std = (gain / fan_in as f64).sqrt();
            Ok(LayerParams {
                weight: Tensor::randn_with(shape, 0.0, std, &mut rng)?,
                bias: Tensor::zeros(&[bias])?,
            })
        };
        let mut trunk = Vec::with_capacity(trunk_shapes.len());
        for s in &trunk_shapes {
            trunk.push(match s {
                Some((shape, bias)) => Some(make(shape, *bias, 2.0)?),
                None => None,
            });
        }
        let mut heads = Vec::with_capacity(head_shapes.len());
        for (shape, bias) in &head_shapes {
            heads.push(make(shape, *bias, 1.0)?);
        }
        Ok(Parameters { trunk, heads })
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        let (trunk_shapes, head_shapes) = param_shapes(spec)?;
        let zero = |(shape, bias): &(Vec<usize>, usize)| -> Result<LayerParams> {
            Ok(LayerParams {
                weight: Tensor::zeros(shape)?,
                bias: Tensor::zeros(&[*bias])?,
            })
        };
        Ok(Parameters {
            trunk: trunk_shapes
                .iter()
                .map(|s| s.as_ref().map(zero).transpose())
                .collect::<Result<_>>()?,
            heads: head_shapes.iter().map(zero).collect::<Result<_>>()?,
        })
    }

    pub fn zeros_like(&self) -> Parameters {
        Parameters {
            trunk: self
                .trunk
                .iter()
                .map(|p| p.as_ref().map(LayerParams::zeros_like))
                .collect(),
            heads: self.heads.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    /// Verifies every tensor has the shape `spec` implies and is finite.
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let (trunk_shapes, head_shapes) = param_shapes(spec)?;
        let matches = |p: &LayerParams, (shape, bias): &(Vec<usize>, usize)| {
            p.weight.shape() == shape.as_slice() && p.bias.shape() == [*bias]
        };
        let trunk_ok = self.trunk.len() == trunk_shapes.len()
            && self.trunk.iter().zip(&trunk_shapes).all(|(p, s)| match (p, s) {
                (Some(p), Some(s)) => matches(p, s),
                (None, None) => true,
                _ => false,
            });
        let heads_ok = self.heads.len() == head_shapes.len()
            && self.heads.iter().zip(&head_shapes).all(|(p, s)| matches(p, s));
        if !trunk_ok || !heads_ok {
            return Err(Error::Shape("parameters do not match the network spec".into()));
        }
        if !self.iter().all(LayerParams::is_finite) {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(())
    }

    /// Trunk parameter layers in order, then heads.
    pub fn iter(&self) -> impl Iterator<Item = &LayerParams> {
        self.trunk.iter().flatten().chain(&self.heads)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.trunk.iter_mut().flatten().chain(self.heads.iter_mut())
    }

    pub fn count(&self) -> usize {
        self.iter().map(LayerParams::len).sum()
    }
}

/// One flag per parameterized trunk layer, in trunk order; `true` = frozen.
/// Heads are always trainable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FreezeMask {
    pub frozen: Vec<bool>,
}

impl FreezeMask {
    pub fn none(spec: &NetworkSpec) -> Self {
        FreezeMask {
            frozen: vec![false; spec.param_layers().len()],
        }
    }

    pub fn all(spec: &NetworkSpec) -> Self {
        FreezeMask {
            frozen: vec![true; spec.param_layers().len()],
        }
    }

    /// Freezes every parameterized layer whose trunk index is below `layer`.
    pub fn below(spec: &NetworkSpec, layer: usize) -> Self {
        FreezeMask {
            frozen: spec.param_layers().iter().map(|&i| i < layer).collect(),
        }
    }

    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = spec.param_layers().len();
        if self.frozen.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "freeze mask has {} entries, network has {expected} parameterized layers",
                self.frozen.len()
            )));
        }
        Ok(())
    }

    /// Per trunk layer: frozen or not (layers without parameters report false).
    pub fn per_layer(&self, spec: &NetworkSpec) -> Vec<bool> {
        let mut out = vec![false; spec.trunk.len()];
        for (&layer, &f) in spec.param_layers().iter().zip(&self.frozen) {
            out[layer] = f;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::default_schema;
    use crate::nn::ArchitectureOptions;

    #[test]
    fn init_shapes_and_determinism() {
        let spec = NetworkSpec::desk_scale(&default_schema(), ArchitectureOptions::default()).unwrap();
        let a = Parameters::init(&spec, 3).unwrap();
        a.check(&spec).unwrap();
        assert_eq!(a.trunk[0].as_ref().unwrap().weight.shape(), &[16, 3, 3, 3]);
        assert_eq!(a.trunk[7].as_ref().unwrap().weight.shape(), &[128, 2048]);
        assert_eq!(a.heads[0].weight.shape(), &[4, 64]);
        assert_eq!(a, Parameters::init(&spec, 3).unwrap());
        assert_ne!(a, Parameters::init(&spec, 4).unwrap());
    }

    #[test]
    fn freeze_masks() {
        let spec = NetworkSpec::desk_scale(&default_schema(), ArchitectureOptions::default()).unwrap();
        assert_eq!(FreezeMask::below(&spec, 7).frozen, vec![true, true, false, false]);
        assert_eq!(FreezeMask::all(&spec).frozen, vec![true; 4]);
        let per_layer = FreezeMask::below(&spec, 7).per_layer(&spec);
        assert!(per_layer[0] && per_layer[3] && !per_layer[7]);
        assert!(FreezeMask { frozen: vec![true] }.check(&spec).is_err());
    }
}
