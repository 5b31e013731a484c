use std::fmt::Write as _;

use crate::data::AttributeSchema;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        out_units: usize,
    },
    /// Inverted dropout: scaled by `1/(1-p)` at train time, identity at eval.
    Dropout {
        p: f64,
    },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }

    fn validate(&self) -> Result<()> {
        let bad = match *self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                ..
            } => out_channels == 0 || kernel == 0 || stride == 0,
            LayerSpec::MaxPool { kernel, stride } => kernel == 0 || stride == 0,
            LayerSpec::Dense { out_units } => out_units == 0,
            LayerSpec::Dropout { p } => !(0.0..1.0).contains(&p),
            LayerSpec::Relu | LayerSpec::Flatten => false,
        };
        if bad {
            return Err(Error::InvalidArgument(format!("invalid layer {self:?}")));
        }
        Ok(())
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        let spatial = |h: usize, k: usize, s: usize, p: usize| -> Result<usize> {
            let padded = h + 2 * p;
            if padded < k {
                return Err(Error::Shape(format!(
                    "{self:?} does not fit input {input:?}"
                )));
            }
            Ok((padded - k) / s + 1)
        };
        match (*self, input) {
            (
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    pad,
                },
                [_, h, w],
            ) => Ok(vec![
                out_channels,
                spatial(*h, kernel, stride, pad)?,
                spatial(*w, kernel, stride, pad)?,
            ]),
            (LayerSpec::MaxPool { kernel, stride }, [c, h, w]) => Ok(vec![
                *c,
                spatial(*h, kernel, stride, 0)?,
                spatial(*w, kernel, stride, 0)?,
            ]),
            (LayerSpec::Dense { out_units }, [_]) => Ok(vec![out_units]),
            (LayerSpec::Flatten, _) => Ok(vec![input.iter().product()]),
            (LayerSpec::Relu | LayerSpec::Dropout { .. }, _) => Ok(input.to_vec()),
            _ => Err(Error::Shape(format!(
                "{self:?} cannot take input of shape {input:?}"
            ))),
        }
    }

    fn to_text(self) -> String {
        match self {
            LayerSpec::Conv {
                out_channels,
                kernel,
                stride,
                pad,
            } => format!("conv {out_channels} {kernel} {stride} {pad}"),
            LayerSpec::Relu => "relu".into(),
            LayerSpec::MaxPool { kernel, stride } => format!("maxpool {kernel} {stride}"),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Dense { out_units } => format!("dense {out_units}"),
            LayerSpec::Dropout { p } => format!("dropout {p}"),
        }
    }
}

/// One softmax head serving a schema group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadSpec {
    pub group_id: usize,
    pub class_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub trunk: Vec<LayerSpec>,
    pub heads: Vec<HeadSpec>,
}

/// Options for [`NetworkSpec::desk_scale`].
#[derive(Clone, Copy, Debug)]
pub struct ArchitectureOptions {
    pub image_size: usize,
    pub dropout: f64,
    /// Also place dropout after convolution blocks, not only after dense layers.
    pub dropout_everywhere: bool,
}

impl Default for ArchitectureOptions {
    fn default() -> Self {
        ArchitectureOptions {
            image_size: 32,
            dropout: 0.5,
            dropout_everywhere: false,
        }
    }
}

impl NetworkSpec {
    /// The default mini-CNN: two conv/pool blocks, two dense layers, and one
    /// head per schema group with an extra "unlabeled" class.
    pub fn desk_scale(schema: &AttributeSchema, opts: ArchitectureOptions) -> Result<Self> {
        let mut trunk = Vec::new();
        let dropout = |trunk: &mut Vec<LayerSpec>| {
            if opts.dropout > 0.0 {
                trunk.push(LayerSpec::Dropout { p: opts.dropout });
            }
        };
        for channels in [16, 32] {
            trunk.push(LayerSpec::Conv {
                out_channels: channels,
                kernel: 3,
                stride: 1,
                pad: 1,
            });
            trunk.push(LayerSpec::Relu);
            trunk.push(LayerSpec::MaxPool { kernel: 2, stride: 2 });
            if opts.dropout_everywhere {
                dropout(&mut trunk);
            }
        }
        trunk.push(LayerSpec::Flatten);
        for units in [128, 64] {
            trunk.push(LayerSpec::Dense { out_units: units });
            trunk.push(LayerSpec::Relu);
            dropout(&mut trunk);
        }
        let spec = NetworkSpec {
            input: [3, opts.image_size, opts.image_size],
            trunk,
            heads: heads_for(schema),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.layer_shapes()?;
        let last = shapes.last().map(|s| s.as_slice()).unwrap_or(&self.input[..]);
        if last.len() != 1 {
            return Err(Error::Shape(format!(
                "trunk must end in a vector for the heads, got {last:?}"
            )));
        }
        let mut groups = std::collections::HashSet::new();
        for head in &self.heads {
            if head.class_count < 2 || !groups.insert(head.group_id) {
                return Err(Error::InvalidArgument(format!("invalid head {head:?}")));
            }
        }
        Ok(())
    }

    /// Checks that heads line up one-to-one with the schema's groups.
    pub fn check_schema(&self, schema: &AttributeSchema) -> Result<()> {
        if self.heads != heads_for(schema) {
            return Err(Error::InvalidArgument(
                "network heads do not match the attribute schema".into(),
            ));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input
    }

    /// Output shape of every trunk layer.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("bad input shape {:?}", self.input)));
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.trunk.len());
        let mut current = self.input.to_vec();
        for layer in &self.trunk {
            current = layer.output_shape(&current)?;
            shapes.push(current.clone());
        }
        Ok(shapes)
    }

    pub fn layer_shape(&self, layer: usize) -> Result<Vec<usize>> {
        self.check_layer(layer)?;
        Ok(self.layer_shapes()?.swap_remove(layer))
    }

    pub fn feature_size(&self) -> Result<usize> {
        Ok(match self.layer_shapes()?.last() {
            Some(s) => s.iter().product(),
            None => self.input.iter().product(),
        })
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.trunk.len() {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range (trunk has {} layers)",
                self.trunk.len()
            )));
        }
        Ok(())
    }

    /// Trunk indices of layers carrying parameters, in order.
    pub fn param_layers(&self) -> Vec<usize> {
        (0..self.trunk.len())
            .filter(|&i| self.trunk[i].has_params())
            .collect()
    }

    /// Resolves a layer by trunk index or by name: `conv-5` (after the last
    /// convolution), `fc-6` (after the first dense layer) or `fc-7` (after the
    /// second). Named layers point at the ReLU following the layer when
    /// there is one.
    pub fn resolve_layer(&self, name: &str) -> Result<usize> {
        let name = name.trim();
        if let Ok(index) = name.parse::<usize>() {
            self.check_layer(index)?;
            return Ok(index);
        }
        let is_conv = |l: &LayerSpec| matches!(l, LayerSpec::Conv { .. });
        let is_dense = |l: &LayerSpec| matches!(l, LayerSpec::Dense { .. });
        let base = match name {
            "conv-5" => self.trunk.iter().rposition(is_conv),
            "fc-6" => self.trunk.iter().position(is_dense),
            "fc-7" => self
                .trunk
                .iter()
                .enumerate()
                .filter(|(_, l)| is_dense(l))
                .nth(1)
                .map(|(i, _)| i),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown layer {name:?}; use a trunk index or one of conv-5, fc-6, fc-7"
                )))
            }
        };
        let base = base.ok_or_else(|| {
            Error::InvalidArgument(format!("network has no layer matching {name:?}"))
        })?;
        Ok(match self.trunk.get(base + 1) {
            Some(LayerSpec::Relu) => base + 1,
            _ => base,
        })
    }

    /// Canonical text form, one item per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let [c, h, w] = self.input;
        let _ = writeln!(out, "input {c} {h} {w}");
        for layer in &self.trunk {
            let _ = writeln!(out, "{}", layer.to_text());
        }
        for head in &self.heads {
            let _ = writeln!(out, "head {} {}", head.group_id, head.class_count);
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let err = |n: usize, msg: &str| Error::format("network spec", format!("line {}: {msg}", n + 1));
        let mut input = None;
        let mut trunk = Vec::new();
        let mut heads = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let words: Vec<&str> = line.split_whitespace().collect();
            let Some((&kind, args)) = words.split_first() else {
                continue;
            };
            let ints = || -> Result<Vec<usize>> {
                args.iter()
                    .map(|a| a.parse::<usize>().map_err(|_| err(n, "expected an integer")))
                    .collect()
            };
            let arity = |k: usize| -> Result<()> {
                if args.len() != k {
                    return Err(err(n, &format!("{kind} takes {k} arguments")));
                }
                Ok(())
            };
            match kind {
                "input" => {
                    arity(3)?;
                    let v = ints()?;
                    input = Some([v[0], v[1], v[2]]);
                }
                "conv" => {
                    arity(4)?;
                    let v = ints()?;
                    trunk.push(LayerSpec::Conv {
                        out_channels: v[0],
                        kernel: v[1],
                        stride: v[2],
                        pad: v[3],
                    });
                }
                "relu" => {
                    arity(0)?;
                    trunk.push(LayerSpec::Relu);
                }
                "maxpool" => {
                    arity(2)?;
                    let v = ints()?;
                    trunk.push(LayerSpec::MaxPool {
                        kernel: v[0],
                        stride: v[1],
                    });
                }
                "flatten" => {
                    arity(0)?;
                    trunk.push(LayerSpec::Flatten);
                }
                "dense" => {
                    arity(1)?;
                    trunk.push(LayerSpec::Dense { out_units: ints()?[0] });
                }
                "dropout" => {
                    arity(1)?;
                    let p = args[0].parse::<f64>().map_err(|_| err(n, "expected a number"))?;
                    trunk.push(LayerSpec::Dropout { p });
                }
                "head" => {
                    arity(2)?;
                    let v = ints()?;
                    heads.push(HeadSpec {
                        group_id: v[0],
                        class_count: v[1],
                    });
                }
                other => return Err(err(n, &format!("unknown item {other:?}"))),
            }
        }
        let spec = NetworkSpec {
            input: input.ok_or_else(|| Error::format("network spec", "missing input line"))?,
            trunk,
            heads,
        };
        spec.validate()
            .map_err(|e| Error::format("network spec", e.to_string()))?;
        Ok(spec)
    }
}

/// One head per group, with one class per label plus the "unlabeled" class.
pub fn heads_for(schema: &AttributeSchema) -> Vec<HeadSpec> {
    schema
        .groups()
        .iter()
        .enumerate()
        .map(|(g, group)| HeadSpec {
            group_id: g,
            class_count: group.labels.len() + 1,
        })
        .collect()
}
