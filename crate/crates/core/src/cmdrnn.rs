//! Convolutional mixture-density recurrent network for next-position
//! prediction, and the ablation variants it is compared against.
//!
//! A window of `L` fingerprints passes through a feature detector (1-D CNN,
//! frozen autoencoder, or nothing), then a recurrent core started from a
//! zero state. The last hidden state feeds either a mixture-density head
//! (trained by negative log-likelihood) or a direct coordinate output
//! (trained by mean squared error).

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::data::{PathWindow, Scaler};
use crate::error::{Error, Result};
use crate::layers::{mse_loss, Activation, CellKind, LayerSpec, Mode, RecurrentCell, Sequential};
use crate::mdn::{self, MixtureParams};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::{Bind, ParamStore};
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;
use crate::train::{self, BatchGraph, LoopConfig, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "rnn-only")]
    RnnOnly,
    #[serde(rename = "cnn+rnn")]
    CnnRnn,
    #[serde(rename = "rnn+mdn")]
    RnnMdn,
    #[serde(rename = "ae+rnn+mdn")]
    AeRnnMdn,
    #[serde(rename = "cmdrnn")]
    Cmdrnn,
    #[serde(rename = "cmdlstm")]
    Cmdlstm,
    #[serde(rename = "cmdgru")]
    Cmdgru,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontEnd {
    Raw,
    Cnn,
    Autoencoder,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::RnnOnly,
        Variant::CnnRnn,
        Variant::RnnMdn,
        Variant::AeRnnMdn,
        Variant::Cmdrnn,
        Variant::Cmdlstm,
        Variant::Cmdgru,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RnnOnly => "rnn-only",
            Variant::CnnRnn => "cnn+rnn",
            Variant::RnnMdn => "rnn+mdn",
            Variant::AeRnnMdn => "ae+rnn+mdn",
            Variant::Cmdrnn => "cmdrnn",
            Variant::Cmdlstm => "cmdlstm",
            Variant::Cmdgru => "cmdgru",
        }
    }

    pub fn front_end(self) -> FrontEnd {
        match self {
            Variant::RnnOnly | Variant::RnnMdn => FrontEnd::Raw,
            Variant::AeRnnMdn => FrontEnd::Autoencoder,
            _ => FrontEnd::Cnn,
        }
    }

    pub fn has_mixture_head(self) -> bool {
        !matches!(self, Variant::RnnOnly | Variant::CnnRnn)
    }

    /// The CMD* variants fix their core; the others use `configured`.
    pub fn cell(self, configured: CellKind) -> CellKind {
        match self {
            Variant::Cmdrnn => CellKind::Vanilla,
            Variant::Cmdlstm => CellKind::Lstm,
            Variant::Cmdgru => CellKind::Gru,
            _ => configured,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!("unknown variant {s:?}; expected one of {}", names.join(", ")))
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AutoencoderConfig {
    pub hidden: usize,
    pub inner: usize,
    pub code: usize,
    pub epochs: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            inner: 128,
            code: 64,
            epochs: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CmdrnnConfig {
    pub variant: Variant,
    /// Core used by the non-CMD* variants.
    pub cell: CellKind,
    pub input_dim: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
    /// Width of the dense layer after the flattened CNN features.
    pub feature_width: usize,
    pub hidden: usize,
    pub memory: usize,
    pub mixtures: usize,
    pub mdn_hidden: usize,
    pub autoencoder: AutoencoderConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl CmdrnnConfig {
    pub fn new(variant: Variant, input_dim: usize) -> Self {
        Self {
            variant,
            cell: CellKind::Vanilla,
            input_dim,
            filters: 100,
            kernel: 5,
            stride: 2,
            pool: 2,
            feature_width: 100,
            hidden: 200,
            memory: 5,
            mixtures: 30,
            mdn_hidden: 200,
            autoencoder: AutoencoderConfig::default(),
            optimizer: OptimizerConfig::rmsprop(1e-3),
            epochs: 300,
            batch_size: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input-dim", self.input_dim),
            ("hidden", self.hidden),
            ("memory", self.memory),
            ("mixtures", self.mixtures),
            ("mdn-hidden", self.mdn_hidden),
            ("batch-size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.optimizer.learning_rate > 0.0 && self.optimizer.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

fn cnn_specs(c: &CmdrnnConfig) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv1d {
            filters: c.filters,
            kernel: c.kernel,
            stride: c.stride,
            activation: Activation::Sigmoid,
        },
        LayerSpec::Maxpool1d {
            width: c.pool,
            stride: c.pool,
            activation: Activation::Relu,
        },
        LayerSpec::Flatten,
        LayerSpec::Dense {
            units: c.feature_width,
            activation: Activation::Sigmoid,
        },
    ]
}

fn dense(units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense { units, activation }
}

#[derive(Debug, Clone, PartialEq)]
struct Autoencoder {
    encoder: Sequential,
    decoder: Sequential,
}

#[derive(Debug, Clone, PartialEq)]
enum Features {
    Raw,
    Cnn(Sequential),
    Autoencoder(Autoencoder),
}

/// Per-epoch losses of a training run; the autoencoder pretraining trace is
/// kept separately.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub trace: Trace,
    pub pretrain: Option<Trace>,
}

#[derive(Debug, Clone)]
pub struct Cmdrnn {
    pub config: CmdrnnConfig,
    pub params: ParamStore,
    pub scaler: Option<Scaler>,
    features: Features,
    cell: RecurrentCell,
    head: Sequential,
    autoencoder_ready: bool,
}

const AE_PREFIX_ENC: &str = "ae.encoder";
const AE_PREFIX_DEC: &str = "ae.decoder";

impl Cmdrnn {
    /// Builds the architecture and initializes parameters from the config
    /// seed.
    pub fn build(config: CmdrnnConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (features, feature_dim) = match c.variant.front_end() {
            FrontEnd::Raw => (Features::Raw, c.input_dim),
            FrontEnd::Cnn => {
                let cnn = Sequential::new("cnn", &[c.input_dim], &cnn_specs(c))?;
                let w = cnn.output_width();
                (Features::Cnn(cnn), w)
            }
            FrontEnd::Autoencoder => {
                let a = &c.autoencoder;
                if a.hidden == 0 || a.inner == 0 || a.code == 0 {
                    return Err(Error::Config("autoencoder widths must be at least 1".into()));
                }
                let encoder = Sequential::new(
                    AE_PREFIX_ENC,
                    &[c.input_dim],
                    &[
                        dense(a.hidden, Activation::Relu),
                        dense(a.inner, Activation::Relu),
                        dense(a.code, Activation::Linear),
                    ],
                )?;
                let decoder = Sequential::new(
                    AE_PREFIX_DEC,
                    &[a.code],
                    &[
                        dense(a.inner, Activation::Relu),
                        dense(a.hidden, Activation::Relu),
                        dense(c.input_dim, Activation::Linear),
                    ],
                )?;
                (Features::Autoencoder(Autoencoder { encoder, decoder }), a.code)
            }
        };
        let cell = RecurrentCell::new("rnn", c.variant.cell(c.cell), feature_dim, c.hidden);
        let head = if c.variant.has_mixture_head() {
            Sequential::new(
                "mdn",
                &[c.hidden],
                &[
                    dense(c.mdn_hidden, Activation::LeakyRelu),
                    dense(mdn::raw_width(c.mixtures), Activation::Linear),
                ],
            )?
        } else {
            Sequential::new("out", &[c.hidden], &[dense(2, Activation::Linear)])?
        };
        let mut params = ParamStore::new();
        let mut rng = stream(c.seed, Stream::WeightInit);
        match &features {
            Features::Raw => {}
            Features::Cnn(cnn) => cnn.init(&mut params, &mut rng),
            Features::Autoencoder(ae) => {
                ae.encoder.init(&mut params, &mut rng);
                ae.decoder.init(&mut params, &mut rng);
            }
        }
        cell.init(&mut params, &mut rng);
        head.init(&mut params, &mut rng);
        Ok(Self {
            config,
            params,
            scaler: None,
            features,
            cell,
            head,
            autoencoder_ready: false,
        })
    }

    /// Scalar count from the layer formulas.
    pub fn param_count(&self) -> usize {
        let front = match &self.features {
            Features::Raw => 0,
            Features::Cnn(cnn) => cnn.param_count(),
            Features::Autoencoder(ae) => ae.encoder.param_count() + ae.decoder.param_count(),
        };
        front + self.cell.param_count() + self.head.param_count()
    }

    pub fn output_width(&self) -> usize {
        self.head.output_width()
    }

    /// Per-sample output shape of each CNN stage, if the variant has one.
    pub fn cnn_stage_shapes(&self) -> Option<Vec<Vec<usize>>> {
        match &self.features {
            Features::Cnn(cnn) => Some(cnn.stage_shapes()),
            _ => None,
        }
    }

    pub fn autoencoder_code_width(&self) -> Option<usize> {
        match &self.features {
            Features::Autoencoder(ae) => Some(ae.encoder.output_width()),
            _ => None,
        }
    }

    pub fn cell_kind(&self) -> CellKind {
        self.cell.kind
    }

    /// Marks the autoencoder as trained (after loading a checkpoint).
    pub(crate) fn set_autoencoder_ready(&mut self, ready: bool) {
        self.autoencoder_ready = ready;
    }

    pub fn autoencoder_ready(&self) -> bool {
        self.autoencoder_ready
    }

    fn check_window(&self, w: &PathWindow) -> Result<()> {
        if w.len != self.config.memory {
            return Err(Error::Data(format!(
                "window length {} but the model's memory length is {}",
                w.len, self.config.memory
            )));
        }
        if w.inputs.len() != w.len * self.config.input_dim {
            return Err(Error::Data(format!(
                "window inputs have {} values per step, model expects {}",
                w.inputs.len() / w.len.max(1),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Records the forward pass of `windows` and returns the head output
    /// `[n, 5K]` (mixture variants) or `[n, 2]`.
    fn forward(&self, g: &mut Graph, bind: Bind, windows: &[&PathWindow]) -> Result<NodeId> {
        let n = windows.len();
        let len = self.config.memory;
        let d = self.config.input_dim;
        // time-major rows: step t of every window is the contiguous block t*n..(t+1)*n
        let mut data = Vec::with_capacity(n * len * d);
        for t in 0..len {
            for w in windows {
                self.check_window(w)?;
                data.extend_from_slice(w.step(t));
            }
        }
        let x = g.input(Tensor::from_vec(&[n * len, d], data));
        let mut eval = Mode::Eval;
        let feats = match &self.features {
            Features::Raw => x,
            Features::Cnn(cnn) => cnn.forward(g, bind, x, &mut eval)?,
            Features::Autoencoder(ae) => ae.encoder.forward(g, Bind::frozen(bind.store()), x, &mut eval)?,
        };
        let mut state = self.cell.zero_state(g, n);
        for t in 0..len {
            let xt = g.slice_rows(feats, t * n, n)?;
            state = self.cell.step(g, bind, xt, state)?;
        }
        Ok(self.head.forward(g, bind, state.h, &mut eval)?)
    }

    fn targets(windows: &[&PathWindow]) -> Tensor {
        Tensor::from_vec(&[windows.len(), 2], windows.iter().flat_map(|w| w.target).collect())
    }

    /// Training loss graph for a batch: mean NLL for mixture variants, MSE
    /// otherwise. Parameters are trainable leaves.
    pub fn loss_graph(&self, windows: &[&PathWindow]) -> Result<(Graph, NodeId)> {
        self.loss_graph_with(&self.params, windows)
    }

    fn loss_graph_with(&self, params: &ParamStore, windows: &[&PathWindow]) -> Result<(Graph, NodeId)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, Bind::trainable(params), windows)?;
        let y = g.input(Self::targets(windows));
        let loss = if self.config.variant.has_mixture_head() {
            mdn::nll_loss(&mut g, out, y)?
        } else {
            mse_loss(&mut g, out, y)?
        };
        Ok((g, loss))
    }

    /// Trains for the configured number of epochs. The autoencoder variant
    /// first fits its autoencoder on the windows' fingerprints, then keeps
    /// it frozen.
    pub fn fit(&mut self, windows: &[PathWindow]) -> Result<FitReport> {
        let epochs = self.config.epochs;
        self.fit_epochs(windows, epochs)
    }

    pub fn fit_epochs(&mut self, windows: &[PathWindow], epochs: usize) -> Result<FitReport> {
        let mut report = FitReport::default();
        if epochs == 0 {
            report.trace = Trace::new(&[]);
            return Ok(report);
        }
        if windows.is_empty() {
            return Err(Error::Data("no training windows".into()));
        }
        for w in windows {
            self.check_window(w)?;
        }
        if matches!(self.features, Features::Autoencoder(_)) && !self.autoencoder_ready {
            report.pretrain = Some(self.pretrain_autoencoder(windows)?);
        }
        let cfg = LoopConfig {
            items: windows.len(),
            batch_size: self.config.batch_size,
            epochs,
            seed: self.config.seed,
            batch_stream: Stream::Dropout,
            salt: 0,
        };
        let mut opt = Optimizer::new(self.config.optimizer);
        let mut params = std::mem::take(&mut self.params);
        let result = train::run(&cfg, &mut params, &mut opt, &[], |p, batch| {
            let picked: Vec<&PathWindow> = batch.items.iter().map(|&i| &windows[i]).collect();
            let (graph, loss) = self.loss_graph_with(p, &picked)?;
            Ok(BatchGraph {
                graph,
                loss,
                components: Vec::new(),
            })
        });
        self.params = params;
        report.trace = result?;
        Ok(report)
    }

    fn pretrain_autoencoder(&mut self, windows: &[PathWindow]) -> Result<Trace> {
        let Features::Autoencoder(ae) = &self.features else {
            unreachable!("caller checked the front end");
        };
        let mut seen = std::collections::BTreeSet::new();
        let mut rows: Vec<&[f64]> = Vec::new();
        for w in windows {
            for t in 0..w.len {
                if seen.insert(w.start + t) {
                    rows.push(w.step(t));
                }
            }
        }
        let cfg = LoopConfig {
            items: rows.len(),
            batch_size: self.config.batch_size,
            epochs: self.config.autoencoder.epochs,
            seed: self.config.seed,
            batch_stream: Stream::Dropout,
            salt: 0xAE,
        };
        let mut opt = Optimizer::new(self.config.optimizer);
        let d = self.config.input_dim;
        let trace = train::run(&cfg, &mut self.params, &mut opt, &[], |p, batch| {
            let mut g = Graph::new();
            let data: Vec<f64> = batch.items.iter().flat_map(|&i| rows[i].iter().copied()).collect();
            let x = g.input(Tensor::from_vec(&[batch.items.len(), d], data));
            let bind = Bind::trainable(p);
            let code = ae.encoder.forward(&mut g, bind, x, &mut Mode::Eval)?;
            let recon = ae.decoder.forward(&mut g, bind, code, &mut Mode::Eval)?;
            let loss = mse_loss(&mut g, recon, x)?;
            Ok(BatchGraph {
                graph: g,
                loss,
                components: Vec::new(),
            })
        })?;
        self.autoencoder_ready = true;
        Ok(trace)
    }

    /// Head outputs for each window, in batches.
    fn predict_raw(&self, windows: &[&PathWindow]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let mut g = Graph::new();
            let node = self.forward(&mut g, Bind::frozen(&self.params), chunk)?;
            let value = g.value(node);
            let w = value.shape()[1];
            out.extend(value.data().chunks(w).map(|r| r.to_vec()));
        }
        Ok(out)
    }

    /// Mixture over the position following `window`, in the units the model
    /// was trained on.
    pub fn predict_next(&self, window: &PathWindow) -> Result<MixtureParams> {
        if !self.config.variant.has_mixture_head() {
            return Err(Error::Config(format!(
                "variant {} has no mixture head",
                self.config.variant
            )));
        }
        let raw = self.predict_raw(&[window])?;
        mdn::params_from_logits(&raw[0])
    }

    pub fn predict_mixtures(&self, windows: &[PathWindow]) -> Result<Vec<MixtureParams>> {
        if !self.config.variant.has_mixture_head() {
            return Err(Error::Config(format!(
                "variant {} has no mixture head",
                self.config.variant
            )));
        }
        let refs: Vec<&PathWindow> = windows.iter().collect();
        self.predict_raw(&refs)?
            .iter()
            .map(|r| mdn::params_from_logits(r))
            .collect()
    }

    /// Point predictions: the mixture mean, or the direct output.
    pub fn predict_points(&self, windows: &[PathWindow]) -> Result<Vec<[f64; 2]>> {
        if self.config.variant.has_mixture_head() {
            Ok(self.predict_mixtures(windows)?.iter().map(mdn::mixture_mean).collect())
        } else {
            let refs: Vec<&PathWindow> = windows.iter().collect();
            Ok(self.predict_raw(&refs)?.into_iter().map(|r| [r[0], r[1]]).collect())
        }
    }

    /// Mean per-window loss on `windows` without updating anything.
    pub fn evaluate_loss(&self, windows: &[PathWindow]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in windows.chunks(256) {
            let refs: Vec<&PathWindow> = chunk.iter().collect();
            let (g, loss) = self.loss_graph(&refs)?;
            total += g.scalar(loss) * chunk.len() as f64;
        }
        Ok(total / windows.len() as f64)
    }
}

#[cfg(test)]
mod tests;
