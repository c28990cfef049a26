//! Differentiable layers built on the autodiff graph.
//!
//! Layers keep no state of their own: a layer knows its parameter names and
//! shapes, initializes them into a [`ParamStore`], and records its forward
//! computation into a [`Graph`] for a batch whose first axis is the sample.

mod recurrent;

pub use recurrent::{CellKind, RecurrentCell, RnnState};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Graph, NodeId, Unary};
use crate::error::{Error, Result};
use crate::params::{Bind, ParamStore};
use crate::rng::StreamRng;

/// Slope of the negative half of the leaky ReLU.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Relu,
    LeakyRelu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: NodeId) -> autodiff::Result<NodeId> {
        match self {
            Activation::Sigmoid => g.sigmoid(x),
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu => g.unary(x, Unary::LeakyRelu(LEAKY_RELU_SLOPE)),
            Activation::Tanh => g.tanh(x),
            Activation::Linear => Ok(x),
        }
    }
}

/// Whether dropout is active, and where its masks come from.
pub enum Mode<'a> {
    Train(&'a mut StreamRng),
    Eval,
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Glorot-style uniform limit.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `activation(x * w^T + b)` for `x [n, inputs]`, `w [units, inputs]`.
pub fn dense(g: &mut Graph, x: NodeId, w: NodeId, b: NodeId, activation: Activation) -> autodiff::Result<NodeId> {
    let z = g.linear(x, w, Some(b))?;
    activation.apply(g, z)
}

/// Valid 1-D cross-correlation of `x [n, length, channels]` with
/// `filters [count, kernel, channels]`.
pub fn conv1d(
    g: &mut Graph,
    x: NodeId,
    filters: NodeId,
    bias: Option<NodeId>,
    stride: usize,
) -> autodiff::Result<NodeId> {
    g.conv1d(x, filters, bias, stride)
}

pub fn maxpool1d(g: &mut Graph, x: NodeId, width: usize, stride: usize) -> autodiff::Result<NodeId> {
    g.maxpool1d(x, width, stride)
}

/// Output length of a valid convolution or pooling window.
pub fn window_out_len(length: usize, width: usize, stride: usize) -> usize {
    (length - width) / stride + 1
}

/// Inverted dropout: during training each unit is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`. Identity otherwise.
pub fn dropout(g: &mut Graph, x: NodeId, rate: f64, mode: &mut Mode) -> autodiff::Result<NodeId> {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let n = g.value(x).len();
            let mask = (0..n)
                .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
                .collect();
            g.masked(x, mask)
        }
        _ => Ok(x),
    }
}

/// Mean over the batch of the squared Euclidean error between rows.
pub fn mse_loss(g: &mut Graph, pred: NodeId, target: NodeId) -> autodiff::Result<NodeId> {
    let n = g.shape(pred)[0] as f64;
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff)?;
    let total = g.sum(sq)?;
    g.affine(total, 1.0 / n, 0.0)
}

/// One layer of a feed-forward stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense {
        units: usize,
        activation: Activation,
    },
    Conv1d {
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Activation,
    },
    Maxpool1d {
        width: usize,
        stride: usize,
        activation: Activation,
    },
    Flatten,
    Dropout {
        rate: f64,
    },
    Activation {
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("{what} in {self:?}")));
        match *self {
            LayerSpec::Dense { units: 0, .. } => bad("units must be >= 1"),
            LayerSpec::Conv1d {
                filters,
                kernel,
                stride,
                ..
            } if filters == 0 || kernel == 0 || stride == 0 => bad("extents must be >= 1"),
            LayerSpec::Maxpool1d { width, stride, .. } if width == 0 || stride == 0 => bad("extents must be >= 1"),
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => bad("dropout rate must be in [0, 1)"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Stage {
    spec: LayerSpec,
    input: Vec<usize>,
    output: Vec<usize>,
}

/// A feed-forward stack with per-sample shape tracking. Sample shapes are
/// `[features]` for vectors and `[length, channels]` for signals.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequential {
    prefix: String,
    stages: Vec<Stage>,
}

impl Sequential {
    pub fn new(prefix: &str, input: &[usize], specs: &[LayerSpec]) -> Result<Self> {
        let mut shape = input.to_vec();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Config(format!("bad input shape {input:?}")));
        }
        let mut stages = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let output = match (spec, shape.as_slice()) {
                (LayerSpec::Dense { units, .. }, [_]) => vec![*units],
                (
                    LayerSpec::Conv1d {
                        filters,
                        kernel,
                        stride,
                        ..
                    },
                    [len] | [len, _],
                ) => {
                    if kernel > len {
                        return Err(Error::Config(format!(
                            "{prefix}: kernel {kernel} wider than input length {len}"
                        )));
                    }
                    vec![window_out_len(*len, *kernel, *stride), *filters]
                }
                (LayerSpec::Maxpool1d { width, stride, .. }, [len, c]) => {
                    if width > len {
                        return Err(Error::Config(format!(
                            "{prefix}: pool width {width} wider than input length {len}"
                        )));
                    }
                    vec![window_out_len(*len, *width, *stride), *c]
                }
                (LayerSpec::Flatten, s) => vec![s.iter().product()],
                (LayerSpec::Dropout { .. } | LayerSpec::Activation { .. }, s) => s.to_vec(),
                (spec, s) => {
                    return Err(Error::Config(format!(
                        "{prefix}: {spec:?} cannot take input of shape {s:?}"
                    )))
                }
            };
            stages.push(Stage {
                spec: spec.clone(),
                input: std::mem::replace(&mut shape, output.clone()),
                output,
            });
        }
        Ok(Self {
            prefix: prefix.to_string(),
            stages,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    /// Per-sample output shape.
    pub fn output_shape(&self) -> Vec<usize> {
        self.stages.last().map(|s| s.output.clone()).unwrap_or_default()
    }

    /// Per-sample output shape of each stage.
    pub fn stage_shapes(&self) -> Vec<Vec<usize>> {
        self.stages.iter().map(|s| s.output.clone()).collect()
    }

    pub fn output_width(&self) -> usize {
        self.output_shape().iter().product()
    }

    fn names(&self, i: usize) -> (String, String) {
        (format!("{}.{i}.w", self.prefix), format!("{}.{i}.b", self.prefix))
    }

    /// Expected number of scalars from the layer formulas.
    pub fn param_count(&self) -> usize {
        self.stages
            .iter()
            .map(|s| match (&s.spec, s.input.as_slice()) {
                (LayerSpec::Dense { units, .. }, [d]) => units * d + units,
                (LayerSpec::Conv1d { filters, kernel, .. }, [_]) => filters * kernel + filters,
                (LayerSpec::Conv1d { filters, kernel, .. }, [_, c]) => filters * kernel * c + filters,
                _ => 0,
            })
            .sum()
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for (i, s) in self.stages.iter().enumerate() {
            let (w, b) = self.names(i);
            match (&s.spec, s.input.as_slice()) {
                (LayerSpec::Dense { units, .. }, [d]) => {
                    store.init_uniform(&w, &[*units, *d], glorot_limit(*d, *units), rng);
                    store.init_zeros(&b, &[*units]);
                }
                (LayerSpec::Conv1d { filters, kernel, .. }, shape) => {
                    let c = shape.get(1).copied().unwrap_or(1);
                    let limit = glorot_limit(kernel * c, kernel * filters);
                    store.init_uniform(&w, &[*filters, *kernel, c], limit, rng);
                    store.init_zeros(&b, &[*filters]);
                }
                _ => {}
            }
        }
    }

    /// Runs the stack on `x` of shape `[n, ..input]`, returning `[n, ..output]`.
    pub fn forward(&self, g: &mut Graph, bind: Bind, x: NodeId, mode: &mut Mode) -> autodiff::Result<NodeId> {
        let mut h = x;
        for (i, s) in self.stages.iter().enumerate() {
            let n = g.shape(h)[0];
            let (wn, bn) = self.names(i);
            h = match &s.spec {
                LayerSpec::Dense { activation, .. } => {
                    let (w, b) = (bind.node(g, &wn), bind.node(g, &bn));
                    dense(g, h, w, b, *activation)?
                }
                LayerSpec::Conv1d { stride, activation, .. } => {
                    if s.input.len() == 1 {
                        h = g.reshape(h, &[n, s.input[0], 1])?;
                    }
                    let (w, b) = (bind.node(g, &wn), bind.node(g, &bn));
                    let y = conv1d(g, h, w, Some(b), *stride)?;
                    activation.apply(g, y)?
                }
                LayerSpec::Maxpool1d {
                    width,
                    stride,
                    activation,
                } => {
                    let y = maxpool1d(g, h, *width, *stride)?;
                    activation.apply(g, y)?
                }
                LayerSpec::Flatten => g.reshape(h, &[n, s.output[0]])?,
                LayerSpec::Dropout { rate } => dropout(g, h, *rate, mode)?,
                LayerSpec::Activation { activation } => activation.apply(g, h)?,
            };
        }
        Ok(h)
    }
}
