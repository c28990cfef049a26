//! RMSProp and Adam.
//!
//! RMSProp: `v <- 0.9 v + 0.1 g^2`, `p <- p - lr g / (sqrt(v) + 1e-8)`.
//!
//! Adam: `m <- b1 m + (1 - b1) g`, `v <- b2 v + (1 - b2) g^2`,
//! `p <- p - lr m_hat / (sqrt(v_hat) + eps)` with bias-corrected moments
//! `m_hat = m / (1 - b1^t)`, `v_hat = v / (1 - b2^t)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Rmsprop,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rmsprop" => Ok(Self::Rmsprop),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Rmsprop => "rmsprop",
            Self::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// RMSProp squared-gradient decay.
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Rescale the global gradient norm to at most this value. Off when `None`.
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn rmsprop(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            learning_rate,
            decay: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::rmsprop(learning_rate)
        }
    }

    pub fn of_kind(kind: OptimizerKind, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::Rmsprop => Self::rmsprop(learning_rate),
            OptimizerKind::Adam => Self::adam(learning_rate),
        }
    }
}

/// Per-parameter accumulators. `second` holds the squared-gradient average
/// (both optimizers); `first` the Adam first moment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizerState {
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Self {
            config,
            state: OptimizerState::default(),
        }
    }

    /// Applies one update to every parameter that has a gradient. A
    /// non-finite gradient rejects the whole step and leaves `params` and
    /// the state untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
        let scale = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.state.steps += 1;
        let c = self.config;
        let t = self.state.steps as i32;
        for (name, grad) in grads.iter() {
            let Some(p) = params.get_mut(name) else {
                return Err(Error::Config(format!("gradient for unknown parameter {name}")));
            };
            let v = self
                .state
                .second
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(grad.shape()));
            match c.kind {
                OptimizerKind::Rmsprop => {
                    for ((p, v), &g) in p.data_mut().iter_mut().zip(v.data_mut()).zip(grad.data()) {
                        let g = g * scale;
                        *v = c.decay * *v + (1.0 - c.decay) * g * g;
                        *p -= c.learning_rate * g / (v.sqrt() + c.epsilon);
                    }
                }
                OptimizerKind::Adam => {
                    let m = self
                        .state
                        .first
                        .entry(name.to_string())
                        .or_insert_with(|| Tensor::zeros(grad.shape()));
                    let bc1 = 1.0 - c.beta1.powi(t);
                    let bc2 = 1.0 - c.beta2.powi(t);
                    for (((p, m), v), &g) in p
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(grad.data())
                    {
                        let g = g * scale;
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *p -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
