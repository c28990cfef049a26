//! Variational autoencoder with semi-supervised position predictors.
//!
//! The encoder maps a fingerprint to a diagonal Gaussian over a small latent
//! space (mean and half-log-variance heads, `σ = exp(hlv)`); the decoder
//! maps a latent draw back to a reconstruction with unit-variance Gaussian
//! likelihood. After unsupervised training the encoder is frozen and a
//! predictor is fit on the labeled subset:
//!
//! * M1 maps the latent mean `μ_z` to a position by least squares;
//! * M2 maps a fresh draw `z ~ N(μ_z, σ_z²)` (optionally with `μ_z`
//!   appended) to a position under Gaussian noise `σ_y`, and predicts by
//!   averaging `S` draws.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::layers::{mse_loss, Activation, LayerSpec, Mode, Sequential};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::{Bind, ParamStore};
use crate::rng::{stream, Stream, StreamRng};
use crate::tensor::Tensor;
use crate::train::{self, BatchGraph, LoopConfig, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    M1,
    M2,
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m1" => Ok(Self::M1),
            "m2" => Ok(Self::M2),
            _ => Err(Error::Config(format!("unknown predictor {s:?}; expected m1 or m2"))),
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::M1 => "m1",
            Self::M2 => "m2",
        })
    }
}

/// What the M2 predictor sees besides the latent draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum M2Input {
    /// `[z, μ_z]`.
    LatentAndMean,
    /// `z` alone.
    LatentOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct VaeConfig {
    pub input_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub latent: usize,
    pub decoder_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    pub dropout: f64,
    pub optimizer: OptimizerConfig,
    /// Noise of the M2 likelihood, in target units.
    pub sigma_y: f64,
    /// Latent draws averaged by M2 at prediction time.
    pub samples: usize,
    pub m2_input: M2Input,
    pub vae_epochs: usize,
    pub predictor_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl VaeConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            encoder_hidden: vec![512, 512],
            latent: 5,
            decoder_hidden: vec![512],
            predictor_hidden: vec![512; 3],
            dropout: 0.3,
            optimizer: OptimizerConfig::adam(1e-3),
            sigma_y: 0.1,
            samples: 50,
            m2_input: M2Input::LatentAndMean,
            vae_epochs: 100,
            predictor_epochs: 100,
            batch_size: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_dim == 0 || self.latent == 0 {
            return bad("input-dim and latent must be at least 1");
        }
        let widths = self
            .encoder_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .chain(&self.predictor_hidden);
        if widths.into_iter().any(|&w| w == 0) {
            return bad("hidden widths must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if !(self.sigma_y > 0.0 && self.sigma_y.is_finite()) {
            return bad("sigma-y must be positive");
        }
        if self.samples == 0 {
            return bad("samples must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch-size must be at least 1");
        }
        if self.optimizer.learning_rate.is_nan() || self.optimizer.learning_rate <= 0.0 {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn validate(&self) -> Result<()> {
        if self.mu.len() != self.sigma.len() || self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Data("latent deviations must be positive and finite".into()));
        }
        Ok(())
    }
}

/// `z = μ + σ ⊙ ε`.
pub fn reparameterize_with(g: &LatentGaussian, eps: &[f64]) -> Vec<f64> {
    g.mu.iter()
        .zip(&g.sigma)
        .zip(eps)
        .map(|((m, s), e)| m + s * e)
        .collect()
}

pub fn reparameterize(g: &LatentGaussian, rng: &mut impl Rng) -> Vec<f64> {
    let eps: Vec<f64> = (0..g.mu.len()).map(|_| rng.sample(StandardNormal)).collect();
    reparameterize_with(g, &eps)
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − log σ² − 1)`.
pub fn kl_term(g: &LatentGaussian) -> f64 {
    0.5 * g
        .mu
        .iter()
        .zip(&g.sigma)
        .map(|(m, s)| m * m + s * s - (s * s).ln() - 1.0)
        .sum::<f64>()
}

fn dense(units: usize, activation: Activation) -> LayerSpec {
    LayerSpec::Dense { units, activation }
}

/// Graph nodes of an encoded batch.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub mu: NodeId,
    pub half_log_var: NodeId,
}

/// Batch ELBO pieces: per-sample means of the reconstruction and KL terms,
/// and their sum.
#[derive(Debug, Clone, Copy)]
pub struct ElboNodes {
    pub loss: NodeId,
    pub reconstruction: NodeId,
    pub kl: NodeId,
}

#[derive(Debug, Clone)]
pub struct Vae {
    pub config: VaeConfig,
    pub params: ParamStore,
    encoder: Sequential,
    decoder: Sequential,
}

impl Vae {
    pub fn build(config: VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut enc: Vec<LayerSpec> = config
            .encoder_hidden
            .iter()
            .map(|&w| dense(w, Activation::Relu))
            .collect();
        enc.push(dense(2 * config.latent, Activation::Linear));
        let mut dec: Vec<LayerSpec> = config
            .decoder_hidden
            .iter()
            .map(|&w| dense(w, Activation::Relu))
            .collect();
        dec.push(dense(config.input_dim, Activation::Linear));
        let encoder = Sequential::new("encoder", &[config.input_dim], &enc)?;
        let decoder = Sequential::new("decoder", &[config.latent], &dec)?;
        let mut params = ParamStore::new();
        let mut rng = stream(config.seed, Stream::WeightInit);
        encoder.init(&mut params, &mut rng);
        decoder.init(&mut params, &mut rng);
        Ok(Self {
            config,
            params,
            encoder,
            decoder,
        })
    }

    pub fn latent(&self) -> usize {
        self.config.latent
    }

    pub fn encoder_digest(&self) -> String {
        self.params.digest_with_prefix("encoder.")
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    fn check_rows(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.shape()[1] != self.config.input_dim {
            return Err(Error::Data(format!(
                "inputs of shape {:?}, encoder expects {} features",
                x.shape(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    pub fn encode_graph(&self, g: &mut Graph, bind: Bind, x: NodeId) -> Result<Encoded> {
        let h = self.encoder.forward(g, bind, x, &mut Mode::Eval)?;
        let k = self.config.latent;
        Ok(Encoded {
            mu: g.slice_cols(h, 0, k)?,
            half_log_var: g.slice_cols(h, k, k)?,
        })
    }

    /// `μ + exp(hlv) ⊙ ε` for an `[n, latent]` noise tensor.
    pub fn sample_graph(&self, g: &mut Graph, enc: Encoded, eps: Tensor) -> Result<NodeId> {
        let sigma = g.exp(enc.half_log_var)?;
        let e = g.input(eps);
        let scaled = g.mul(sigma, e)?;
        Ok(g.add(enc.mu, scaled)?)
    }

    pub fn decode_graph(&self, g: &mut Graph, bind: Bind, z: NodeId) -> Result<NodeId> {
        Ok(self.decoder.forward(g, bind, z, &mut Mode::Eval)?)
    }

    /// Negative ELBO of a batch with the given noise `ε`.
    pub fn elbo_graph(&self, g: &mut Graph, bind: Bind, x: Tensor, eps: Tensor) -> Result<ElboNodes> {
        self.check_rows(&x)?;
        let n = x.shape()[0] as f64;
        let xn = g.input(x);
        let enc = self.encode_graph(g, bind, xn)?;
        let z = self.sample_graph(g, enc, eps)?;
        let recon = self.decode_graph(g, bind, z)?;
        let diff = g.sub(recon, xn)?;
        let sq = g.square(diff)?;
        let sq_sum = g.sum(sq)?;
        let reconstruction = g.affine(sq_sum, 0.5 / n, 0.0)?;
        // ½ Σ (μ² + exp(2 hlv) − 2 hlv − 1), averaged over the batch
        let mu2 = g.square(enc.mu)?;
        let var = g.affine(enc.half_log_var, 2.0, 0.0)?;
        let var_exp = g.exp(var)?;
        let t = g.add(mu2, var_exp)?;
        let t = g.sub(t, var)?;
        let t_sum = g.sum(t)?;
        let count = (self.config.latent as f64) * n;
        let kl = g.affine(t_sum, 0.5 / n, -0.5 * count / n)?;
        let loss = g.add(reconstruction, kl)?;
        Ok(ElboNodes {
            loss,
            reconstruction,
            kl,
        })
    }

    /// Posterior of each row of `x`.
    pub fn encode(&self, x: &Tensor) -> Result<Vec<LatentGaussian>> {
        self.check_rows(x)?;
        let mut out = Vec::with_capacity(x.shape()[0]);
        let k = self.config.latent;
        for chunk in row_chunks(x, 512) {
            let mut g = Graph::new();
            let xn = g.input(chunk);
            let enc = self.encode_graph(&mut g, Bind::frozen(&self.params), xn)?;
            let mu = g.value(enc.mu).data().to_vec();
            let hlv = g.value(enc.half_log_var).data().to_vec();
            for (m, h) in mu.chunks(k).zip(hlv.chunks(k)) {
                out.push(LatentGaussian {
                    mu: m.to_vec(),
                    sigma: h.iter().map(|v| v.exp()).collect(),
                });
            }
        }
        Ok(out)
    }

    /// Reconstruction means of latent rows `[n, latent]`.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 2 || z.shape()[1] != self.config.latent {
            return Err(Error::Data(format!("latent rows of shape {:?}", z.shape())));
        }
        let mut g = Graph::new();
        let zn = g.input(z.clone());
        let out = self.decode_graph(&mut g, Bind::frozen(&self.params), zn)?;
        Ok(g.value(out).clone())
    }

    /// Fits encoder and decoder on unlabeled rows by minimizing the negative
    /// ELBO with one latent draw per row per step. The trace records the
    /// reconstruction and KL terms.
    pub fn train_unsupervised(&mut self, x: &Tensor) -> Result<Trace> {
        self.train_unsupervised_epochs(x, self.config.vae_epochs)
    }

    pub fn train_unsupervised_epochs(&mut self, x: &Tensor, epochs: usize) -> Result<Trace> {
        self.check_rows(x)?;
        let d = self.config.input_dim;
        let k = self.config.latent;
        let cfg = LoopConfig {
            items: x.shape()[0],
            batch_size: self.config.batch_size,
            epochs,
            seed: self.config.seed,
            batch_stream: Stream::Reparameterize,
            salt: 0x7AE,
        };
        let mut opt = Optimizer::new(self.config.optimizer);
        let mut params = std::mem::take(&mut self.params);
        let result = train::run(&cfg, &mut params, &mut opt, &["reconstruction", "kl"], |p, batch| {
            let rows = gather_rows(x, batch.items, d);
            let eps = normal_tensor(batch.items.len(), k, batch.rng);
            let mut g = Graph::new();
            let e = self.elbo_graph(&mut g, Bind::trainable(p), rows, eps)?;
            Ok(BatchGraph {
                graph: g,
                loss: e.loss,
                components: vec![e.reconstruction, e.kl],
            })
        });
        self.params = params;
        result
    }

    /// Latent means as CSV rows with building and floor labels (empty when
    /// absent).
    pub fn write_latent_csv(&self, ds: &Dataset, path: &Path) -> Result<usize> {
        let all: Vec<usize> = (0..ds.len()).collect();
        let latents = self.encode(&ds.inputs(&all))?;
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.config.latent).map(|i| format!("z{i}")).collect();
        header.extend(["building".into(), "floor".into()]);
        w.write_record(&header)?;
        for (lg, r) in latents.iter().zip(&ds.records) {
            let mut row: Vec<String> = lg.mu.iter().map(|v| v.to_string()).collect();
            row.push(r.meta.building.map(|b| b.to_string()).unwrap_or_default());
            row.push(r.meta.floor.map(|f| f.to_string()).unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(latents.len())
    }
}

fn row_chunks(x: &Tensor, rows: usize) -> Vec<Tensor> {
    let (n, d) = x.as_matrix_dims();
    (0..n)
        .step_by(rows)
        .map(|s| {
            let e = (s + rows).min(n);
            Tensor::from_vec(&[e - s, d], x.data()[s * d..e * d].to_vec())
        })
        .collect()
}

fn gather_rows(x: &Tensor, items: &[usize], d: usize) -> Tensor {
    let data: Vec<f64> = items.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
    Tensor::from_vec(&[items.len(), d], data)
}

fn normal_tensor(n: usize, k: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(&[n, k], (0..n * k).map(|_| rng.sample(StandardNormal)).collect())
}

/// Position predictor on top of a frozen encoder.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub kind: PredictorKind,
    pub params: ParamStore,
    net: Sequential,
    latent: usize,
    m2_input: M2Input,
    sigma_y: f64,
    samples: usize,
}

impl Predictor {
    pub fn new(kind: PredictorKind, config: &VaeConfig) -> Result<Self> {
        config.validate()?;
        let width = match (kind, config.m2_input) {
            (PredictorKind::M2, M2Input::LatentAndMean) => 2 * config.latent,
            _ => config.latent,
        };
        let mut specs = Vec::new();
        for &w in &config.predictor_hidden {
            specs.push(dense(w, Activation::Relu));
            specs.push(LayerSpec::Dropout { rate: config.dropout });
        }
        specs.push(dense(2, Activation::Linear));
        let net = Sequential::new("predictor", &[width], &specs)?;
        let mut params = ParamStore::new();
        let salt = match kind {
            PredictorKind::M1 => 1,
            PredictorKind::M2 => 2,
        };
        net.init(
            &mut params,
            &mut crate::rng::substream(config.seed, Stream::WeightInit, salt),
        );
        Ok(Self {
            kind,
            params,
            net,
            latent: config.latent,
            m2_input: config.m2_input,
            sigma_y: config.sigma_y,
            samples: config.samples,
        })
    }

    pub fn input_width(&self) -> usize {
        match (self.kind, self.m2_input) {
            (PredictorKind::M2, M2Input::LatentAndMean) => 2 * self.latent,
            _ => self.latent,
        }
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    pub fn set_sigma_y(&mut self, sigma_y: f64) {
        self.sigma_y = sigma_y;
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Predictor input for a batch: `μ_z` (M1), or a draw with optional
    /// `μ_z` (M2) using noise `eps`.
    fn input_graph(&self, g: &mut Graph, vae: &Vae, x: Tensor, eps: Option<Tensor>) -> Result<NodeId> {
        vae.check_rows(&x)?;
        let xn = g.input(x);
        let enc = vae.encode_graph(g, Bind::frozen(&vae.params), xn)?;
        match (self.kind, eps) {
            (PredictorKind::M1, _) => Ok(enc.mu),
            (PredictorKind::M2, Some(eps)) => {
                let z = vae.sample_graph(g, enc, eps)?;
                match self.m2_input {
                    M2Input::LatentAndMean => Ok(g.concat_cols(&[z, enc.mu])?),
                    M2Input::LatentOnly => Ok(z),
                }
            }
            (PredictorKind::M2, None) => Err(Error::Config("M2 needs latent noise".into())),
        }
    }

    /// Training loss of a batch: MSE for M1, `Σ‖y − f‖² / (2σ_y² n)` for M2.
    pub fn loss_graph(
        &self,
        vae: &Vae,
        params: &ParamStore,
        x: Tensor,
        y: Tensor,
        rng: &mut StreamRng,
    ) -> Result<(Graph, NodeId)> {
        let mut g = Graph::new();
        let n = x.shape()[0];
        let eps = (self.kind == PredictorKind::M2).then(|| normal_tensor(n, self.latent, rng));
        let input = self.input_graph(&mut g, vae, x, eps)?;
        let out = self
            .net
            .forward(&mut g, Bind::trainable(params), input, &mut Mode::Train(rng))?;
        let yn = g.input(y);
        let loss = match self.kind {
            PredictorKind::M1 => mse_loss(&mut g, out, yn)?,
            PredictorKind::M2 => {
                let diff = g.sub(out, yn)?;
                let sq = g.square(diff)?;
                let total = g.sum(sq)?;
                g.affine(total, 1.0 / (2.0 * self.sigma_y * self.sigma_y * n as f64), 0.0)?
            }
        };
        Ok((g, loss))
    }

    /// Trains on labeled rows `x` with positions `y`; the VAE is only read.
    #[allow(clippy::too_many_arguments)]
    pub fn fit(
        &mut self,
        vae: &Vae,
        x: &Tensor,
        y: &[[f64; 2]],
        epochs: usize,
        batch_size: usize,
        seed: u64,
        optimizer: OptimizerConfig,
    ) -> Result<Trace> {
        vae.check_rows(x)?;
        if y.is_empty() || y.len() != x.shape()[0] {
            return Err(Error::Data("predictor needs at least one labeled pair".into()));
        }
        let d = vae.config.input_dim;
        let cfg = LoopConfig {
            items: y.len(),
            batch_size,
            epochs,
            seed,
            batch_stream: Stream::Dropout,
            salt: match self.kind {
                PredictorKind::M1 => 0x31,
                PredictorKind::M2 => 0x32,
            },
        };
        let mut opt = Optimizer::new(optimizer);
        let mut params = std::mem::take(&mut self.params);
        let result = train::run(&cfg, &mut params, &mut opt, &[], |p, batch| {
            let rows = gather_rows(x, batch.items, d);
            let targets = Tensor::from_vec(
                &[batch.items.len(), 2],
                batch.items.iter().flat_map(|&i| y[i]).collect(),
            );
            let (graph, loss) = self.loss_graph(vae, p, rows, targets, batch.rng)?;
            Ok(BatchGraph {
                graph,
                loss,
                components: Vec::new(),
            })
        });
        self.params = params;
        result
    }

    fn forward_eval(&self, input: Tensor) -> Result<Vec<[f64; 2]>> {
        let mut g = Graph::new();
        let i = g.input(input);
        let out = self
            .net
            .forward(&mut g, Bind::frozen(&self.params), i, &mut Mode::Eval)?;
        Ok(g.value(out).data().chunks(2).map(|r| [r[0], r[1]]).collect())
    }

    /// M1: `f(μ_z)`. M2: the mean of `f` over `samples` draws of `z`.
    pub fn predict_from_latents(
        &self,
        latents: &[LatentGaussian],
        samples: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<[f64; 2]>> {
        if latents.is_empty() {
            return Ok(Vec::new());
        }
        let n = latents.len();
        let k = self.latent;
        let mu: Vec<f64> = latents.iter().flat_map(|l| l.mu.iter().copied()).collect();
        match self.kind {
            PredictorKind::M1 => self.forward_eval(Tensor::from_vec(&[n, k], mu)),
            PredictorKind::M2 => {
                if samples == 0 {
                    return Err(Error::Config("M2 prediction needs at least one sample".into()));
                }
                let mut acc = vec![[0.0; 2]; n];
                for _ in 0..samples {
                    let mut rows = Vec::with_capacity(n * self.input_width());
                    for l in latents {
                        let eps: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                        rows.extend(reparameterize_with(l, &eps));
                        if self.m2_input == M2Input::LatentAndMean {
                            rows.extend_from_slice(&l.mu);
                        }
                    }
                    let out = self.forward_eval(Tensor::from_vec(&[n, self.input_width()], rows))?;
                    for (a, o) in acc.iter_mut().zip(out) {
                        a[0] += o[0];
                        a[1] += o[1];
                    }
                }
                let s = samples as f64;
                Ok(acc.into_iter().map(|a| [a[0] / s, a[1] / s]).collect())
            }
        }
    }

    pub fn predict(&self, vae: &Vae, x: &Tensor, samples: usize, rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
        let latents = vae.encode(x)?;
        self.predict_from_latents(&latents, samples, rng)
    }
}

/// Fits a predictor of `kind` using the config's epochs, batch size,
/// optimizer and seed.
pub fn train_predictor(kind: PredictorKind, vae: &Vae, x: &Tensor, y: &[[f64; 2]]) -> Result<(Predictor, Trace)> {
    let c = &vae.config;
    let mut p = Predictor::new(kind, c)?;
    let trace = p.fit(vae, x, y, c.predictor_epochs, c.batch_size, c.seed, c.optimizer)?;
    Ok((p, trace))
}

#[cfg(test)]
mod tests;
