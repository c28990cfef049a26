//! Mini-batch training loop shared by the models.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, Graph, NodeId};
use crate::error::{Error, Result};
use crate::optim::Optimizer;
use crate::params::ParamStore;
use crate::rng::{substream, Stream, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Means of the named loss components, same order as [`Trace::components`].
    pub components: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub components: Vec<String>,
    pub epochs: Vec<EpochRecord>,
}

impl Trace {
    pub fn new(components: &[&str]) -> Self {
        Self {
            components: components.iter().map(|s| s.to_string()).collect(),
            epochs: Vec::new(),
        }
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// CSV with columns `epoch, loss, <components>`; floats use the
    /// shortest round-trip representation.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,loss");
        for c in &self.components {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{}", e.epoch, e.loss));
            for v in &e.components {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }
}

/// Context handed to the per-batch graph builder.
pub struct Batch<'a> {
    pub epoch: usize,
    pub index: usize,
    pub items: &'a [usize],
    /// Stream private to this batch, for dropout masks and latent draws.
    pub rng: &'a mut StreamRng,
}

/// A built batch: the graph, its scalar loss and optional scalar components.
pub struct BatchGraph {
    pub graph: Graph,
    pub loss: NodeId,
    pub components: Vec<NodeId>,
}

pub struct LoopConfig {
    pub items: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stream feeding [`Batch::rng`].
    pub batch_stream: Stream,
    /// Salt keeping shuffles of different loops on one seed apart.
    pub salt: u64,
}

fn diverged(epoch: usize, batch: usize, detail: impl Into<String>) -> Error {
    Error::Diverged {
        epoch,
        batch,
        detail: detail.into(),
    }
}

/// Shuffles `0..items` each epoch, builds one graph per mini-batch, and
/// steps the optimizer on its gradients. Numerical failures abort with the
/// epoch and batch index.
/// `components` names the extra scalars returned by `build`.
pub fn run<F>(
    cfg: &LoopConfig,
    params: &mut ParamStore,
    opt: &mut Optimizer,
    components: &[&str],
    mut build: F,
) -> Result<Trace>
where
    F: FnMut(&ParamStore, Batch) -> Result<BatchGraph>,
{
    if cfg.epochs > 0 && cfg.items == 0 {
        return Err(Error::Data("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut trace = Trace::new(components);
    let mut order: Vec<usize> = (0..cfg.items).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle = substream(cfg.seed ^ cfg.salt, Stream::Shuffle, epoch as u64);
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut comp_sum = vec![0.0; components.len()];
        for (index, items) in order.chunks(cfg.batch_size).enumerate() {
            let mut rng = substream(
                cfg.seed ^ cfg.salt,
                cfg.batch_stream,
                ((epoch as u64) << 32) | index as u64,
            );
            let batch = Batch {
                epoch,
                index,
                items,
                rng: &mut rng,
            };
            let built = build(params, batch).map_err(|e| match e {
                Error::Graph(AdError::NonFinite { op, .. }) => {
                    diverged(epoch, index, format!("{op} produced a non-finite value"))
                }
                other => other,
            })?;
            let loss = built.graph.scalar(built.loss);
            if !loss.is_finite() {
                return Err(diverged(epoch, index, "loss is not finite"));
            }
            let w = items.len() as f64;
            loss_sum += loss * w;
            for (s, &c) in comp_sum.iter_mut().zip(&built.components) {
                *s += built.graph.scalar(c) * w;
            }
            let grads = built.graph.backward(built.loss)?;
            opt.step(params, &grads).map_err(|e| match e {
                Error::NonFiniteGradient(name) => diverged(epoch, index, format!("gradient of {name} is not finite")),
                other => other,
            })?;
        }
        let n = cfg.items as f64;
        trace.epochs.push(EpochRecord {
            epoch: trace.epochs.len(),
            loss: loss_sum / n,
            components: comp_sum.iter().map(|s| s / n).collect(),
        });
        log::debug!("epoch {epoch}: loss {}", loss_sum / n);
    }
    Ok(trace)
}
