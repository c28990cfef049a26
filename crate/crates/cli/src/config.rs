//! Flat run configuration. The same keys are accepted in a TOML file
//! (`--config`) and as flags; flags win. After resolution every key holds
//! its effective value, and that document is written next to the outputs.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use probloc::cmdrnn::{AutoencoderConfig, CmdrnnConfig, Variant};
use probloc::data::{GenericSchema, PreprocessOptions, Schema, SynthConfig};
use probloc::layers::CellKind;
use probloc::optim::{OptimizerConfig, OptimizerKind};
use probloc::vae::{M2Input, PredictorKind, VaeConfig};
use probloc::{Error, Result};

/// Name of the resolved configuration written under `--out`.
pub const RESOLVED_CONFIG: &str = "resolved-config.toml";

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    // data
    /// Input CSV file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// tampere, ujiindoorloc, generic or synthetic.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    /// Number of RSSI columns of a generic CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    /// Zero-based x,y column indices of a generic CSV.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_cols: Option<Vec<usize>>,
    /// Zero-based path id column of a generic CSV.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path_col: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dedup: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize_rssi: Option<bool>,
    /// Standardize each WAP column (statistics are stored in checkpoints).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standardize_rssi: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale_targets: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_aps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_paths: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_noise_db: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_height: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_step_length: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_turn_std: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_seed: Option<u64>,

    // run
    /// Output directory; every artifact is written below it.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Checkpoint to load.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Model to evaluate: a network variant, previous-position, knn, m1 or m2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// First seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at `seed`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
    /// Seeds run in parallel.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// Record per-seed wall-clock time (reports stop being byte-reproducible).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knn_k: Option<usize>,
    /// Sweep parameter: mixture-count or memory-length.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<usize>>,
    /// Labeled fractions for `experiment`.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fractions: Option<Vec<f64>>,
    /// next-location or semi-supervised; inferred from `model` when unset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<String>,
    /// What `compare` contrasts: optimizers or feature-detectors.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<String>,

    // next-location network
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    /// Recurrent cell: vanilla, lstm or gru. The cmdlstm and cmdgru variants fix it.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cell: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub memory: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixtures: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mdn_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ae_hidden: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ae_inner: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ae_code: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ae_epochs: Option<usize>,
    /// rmsprop or adam.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Leading share of each path's windows used for training.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,

    // semi-supervised
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_hidden: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latent: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decoder_hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor_hidden: Option<Vec<usize>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dropout: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// latent-and-mean or latent-only.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m2_input: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vae_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vae_optimizer: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vae_learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vae_batch_size: Option<usize>,
    /// m1 or m2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictor: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeled_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse<T: std::str::FromStr<Err = Error>>(value: &Option<String>, key: &str) -> Result<Option<T>> {
    value
        .as_deref()
        .map(|s| s.parse::<T>().map_err(|e| config_err(format!("{key}: {e}"))))
        .transpose()
}

fn optimizer(
    kind: &Option<String>,
    lr: Option<f64>,
    clip: Option<f64>,
    default: OptimizerConfig,
) -> Result<OptimizerConfig> {
    let kind = parse::<OptimizerKind>(kind, "optimizer")?.unwrap_or(default.kind);
    let mut c = OptimizerConfig::of_kind(kind, lr.unwrap_or(default.learning_rate));
    c.clip_norm = clip;
    Ok(c)
}

fn cell_kind(s: &str) -> Result<CellKind> {
    match s {
        "vanilla" => Ok(CellKind::Vanilla),
        "lstm" => Ok(CellKind::Lstm),
        "gru" => Ok(CellKind::Gru),
        _ => Err(config_err(format!(
            "cell: unknown cell {s:?}; expected vanilla, lstm or gru"
        ))),
    }
}

fn cell_name(c: CellKind) -> &'static str {
    match c {
        CellKind::Vanilla => "vanilla",
        CellKind::Lstm => "lstm",
        CellKind::Gru => "gru",
    }
}

fn m2_input(s: &str) -> Result<M2Input> {
    match s {
        "latent-and-mean" => Ok(M2Input::LatentAndMean),
        "latent-only" => Ok(M2Input::LatentOnly),
        _ => Err(config_err(format!(
            "m2-input: unknown value {s:?}; expected latent-and-mean or latent-only"
        ))),
    }
}

impl RunConfig {
    /// Reads a TOML document; unknown keys are rejected.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {}", path.display(), e.message())))
    }

    /// `self` with every key set in `flags` replaced.
    pub fn overlay(self, flags: &RunConfig) -> Result<Self> {
        let to_table = |c: &RunConfig| match toml::Value::try_from(c) {
            Ok(toml::Value::Table(t)) => Ok(t),
            Ok(_) => unreachable!("a struct serializes to a table"),
            Err(e) => Err(config_err(e.to_string())),
        };
        let mut base = to_table(&self)?;
        base.extend(to_table(flags)?);
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| config_err(e.message()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        let n = self.seeds.unwrap_or(1) as u64;
        (0..n).map(|i| self.seed() + i).collect()
    }

    pub fn schema_name(&self) -> &str {
        self.schema.as_deref().unwrap_or("tampere")
    }

    pub fn is_synthetic(&self) -> bool {
        self.schema_name() == "synthetic"
    }

    pub fn csv_schema(&self) -> Result<Schema> {
        Ok(match self.schema_name() {
            "tampere" => Schema::Tampere,
            "ujiindoorloc" | "uji" => Schema::Ujiindoorloc,
            "generic" => {
                let d = self
                    .input_dim
                    .ok_or_else(|| config_err("a generic schema needs input-dim"))?;
                let target_cols = match self.target_cols.as_deref() {
                    None => Some([d, d + 1]),
                    Some([]) => None,
                    Some([x, y]) => Some([*x, *y]),
                    Some(_) => return Err(config_err("target-cols takes two indices")),
                };
                Schema::Generic(GenericSchema {
                    input_dim: d,
                    target_cols,
                    path_col: self.path_col.or(self.target_cols.is_none().then_some(d + 2)),
                })
            }
            other => {
                return Err(config_err(format!(
                    "schema: unknown schema {other:?}; expected tampere, ujiindoorloc, generic or synthetic"
                )))
            }
        })
    }

    pub fn synth_config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            aps: self.synth_aps.unwrap_or(d.aps),
            steps: self.synth_steps.unwrap_or(d.steps),
            paths: self.synth_paths.unwrap_or(d.paths),
            noise_db: self.synth_noise_db.unwrap_or(d.noise_db),
            width: self.synth_width.unwrap_or(d.width),
            height: self.synth_height.unwrap_or(d.height),
            step_length: self.synth_step_length.unwrap_or(d.step_length),
            turn_std: self.synth_turn_std.unwrap_or(d.turn_std),
            seed: self.synth_seed.unwrap_or(d.seed),
        }
    }

    pub fn preprocess_options(&self) -> PreprocessOptions {
        let d = PreprocessOptions::default();
        PreprocessOptions {
            dedup: self.dedup,
            normalize_rssi: self.normalize_rssi.unwrap_or(d.normalize_rssi),
            standardize_rssi: self.standardize_rssi.unwrap_or(d.standardize_rssi),
            scale_targets: self.scale_targets.unwrap_or(d.scale_targets),
        }
    }

    pub fn knn_k(&self) -> usize {
        self.knn_k.unwrap_or(3)
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1).max(1)
    }

    pub fn train_fraction(&self) -> f64 {
        self.train_fraction.unwrap_or(0.8)
    }

    pub fn labeled_fraction(&self) -> f64 {
        self.labeled_fraction.unwrap_or(1.0)
    }

    pub fn test_fraction(&self) -> f64 {
        self.test_fraction.unwrap_or(0.2)
    }

    pub fn predictor_kind(&self) -> Result<PredictorKind> {
        Ok(parse::<PredictorKind>(&self.predictor, "predictor")?.unwrap_or(PredictorKind::M1))
    }

    pub fn variant(&self) -> Result<Variant> {
        Ok(parse::<Variant>(&self.variant, "variant")?.unwrap_or(Variant::Cmdrnn))
    }

    pub fn cmdrnn_config(&self, input_dim: usize) -> Result<CmdrnnConfig> {
        let d = CmdrnnConfig::new(self.variant()?, input_dim);
        let ae = AutoencoderConfig::default();
        let c = CmdrnnConfig {
            cell: self.cell.as_deref().map(cell_kind).transpose()?.unwrap_or(d.cell),
            filters: self.filters.unwrap_or(d.filters),
            kernel: self.kernel.unwrap_or(d.kernel),
            stride: self.stride.unwrap_or(d.stride),
            pool: self.pool.unwrap_or(d.pool),
            feature_width: self.feature_width.unwrap_or(d.feature_width),
            hidden: self.hidden.unwrap_or(d.hidden),
            memory: self.memory.unwrap_or(d.memory),
            mixtures: self.mixtures.unwrap_or(d.mixtures),
            mdn_hidden: self.mdn_hidden.unwrap_or(d.mdn_hidden),
            autoencoder: AutoencoderConfig {
                hidden: self.ae_hidden.unwrap_or(ae.hidden),
                inner: self.ae_inner.unwrap_or(ae.inner),
                code: self.ae_code.unwrap_or(ae.code),
                epochs: self.ae_epochs.unwrap_or(ae.epochs),
            },
            optimizer: optimizer(&self.optimizer, self.learning_rate, self.clip_norm, d.optimizer)?,
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            seed: self.seed(),
            ..d
        };
        c.validate()?;
        Ok(c)
    }

    pub fn vae_config(&self, input_dim: usize) -> Result<VaeConfig> {
        let d = VaeConfig::new(input_dim);
        let c = VaeConfig {
            encoder_hidden: self.encoder_hidden.clone().unwrap_or(d.encoder_hidden),
            latent: self.latent.unwrap_or(d.latent),
            decoder_hidden: self.decoder_hidden.clone().unwrap_or(d.decoder_hidden),
            predictor_hidden: self.predictor_hidden.clone().unwrap_or(d.predictor_hidden),
            dropout: self.dropout.unwrap_or(d.dropout),
            optimizer: optimizer(&self.vae_optimizer, self.vae_learning_rate, None, d.optimizer)?,
            sigma_y: self.sigma_y.unwrap_or(d.sigma_y),
            samples: self.samples.unwrap_or(d.samples),
            m2_input: self
                .m2_input
                .as_deref()
                .map(m2_input)
                .transpose()?
                .unwrap_or(d.m2_input),
            vae_epochs: self.vae_epochs.unwrap_or(d.vae_epochs),
            predictor_epochs: self.predictor_epochs.unwrap_or(d.predictor_epochs),
            batch_size: self.vae_batch_size.unwrap_or(d.batch_size),
            seed: self.seed(),
            ..d
        };
        c.validate()?;
        Ok(c)
    }

    /// Fills every unset key with the value actually used.
    pub fn resolve(&mut self, input_dim: usize) -> Result<()> {
        let n = self.cmdrnn_config(input_dim)?;
        let v = self.vae_config(input_dim)?;
        let s = self.synth_config();
        let p = self.preprocess_options();
        self.schema.get_or_insert_with(|| "tampere".into());
        if self.schema_name() == "generic" {
            self.input_dim.get_or_insert(input_dim);
        }
        if self.is_synthetic() {
            self.synth_aps = Some(s.aps);
            self.synth_steps = Some(s.steps);
            self.synth_paths = Some(s.paths);
            self.synth_noise_db = Some(s.noise_db);
            self.synth_width = Some(s.width);
            self.synth_height = Some(s.height);
            self.synth_step_length = Some(s.step_length);
            self.synth_turn_std = Some(s.turn_std);
            self.synth_seed = Some(s.seed);
        }
        self.normalize_rssi = Some(p.normalize_rssi);
        self.standardize_rssi = Some(p.standardize_rssi);
        self.scale_targets = Some(p.scale_targets);
        self.seed = Some(self.seed());
        self.seeds = Some(self.seeds.unwrap_or(1));
        self.split_seed = Some(self.split_seed.unwrap_or(0));
        self.jobs = Some(self.jobs());
        self.timing = Some(self.timing.unwrap_or(false));
        self.knn_k = Some(self.knn_k());
        self.variant = Some(n.variant.to_string());
        self.cell = Some(cell_name(n.cell).into());
        self.filters = Some(n.filters);
        self.kernel = Some(n.kernel);
        self.stride = Some(n.stride);
        self.pool = Some(n.pool);
        self.feature_width = Some(n.feature_width);
        self.hidden = Some(n.hidden);
        self.memory = Some(n.memory);
        self.mixtures = Some(n.mixtures);
        self.mdn_hidden = Some(n.mdn_hidden);
        self.ae_hidden = Some(n.autoencoder.hidden);
        self.ae_inner = Some(n.autoencoder.inner);
        self.ae_code = Some(n.autoencoder.code);
        self.ae_epochs = Some(n.autoencoder.epochs);
        self.optimizer = Some(n.optimizer.kind.to_string());
        self.learning_rate = Some(n.optimizer.learning_rate);
        self.epochs = Some(n.epochs);
        self.batch_size = Some(n.batch_size);
        self.train_fraction = Some(self.train_fraction());
        self.encoder_hidden = Some(v.encoder_hidden);
        self.latent = Some(v.latent);
        self.decoder_hidden = Some(v.decoder_hidden);
        self.predictor_hidden = Some(v.predictor_hidden);
        self.dropout = Some(v.dropout);
        self.sigma_y = Some(v.sigma_y);
        self.samples = Some(v.samples);
        self.m2_input = Some(
            match v.m2_input {
                M2Input::LatentAndMean => "latent-and-mean",
                M2Input::LatentOnly => "latent-only",
            }
            .into(),
        );
        self.vae_epochs = Some(v.vae_epochs);
        self.predictor_epochs = Some(v.predictor_epochs);
        self.vae_optimizer = Some(v.optimizer.kind.to_string());
        self.vae_learning_rate = Some(v.optimizer.learning_rate);
        self.vae_batch_size = Some(v.batch_size);
        self.predictor = Some(self.predictor_kind()?.to_string());
        self.labeled_fraction = Some(self.labeled_fraction());
        self.test_fraction = Some(self.test_fraction());
        Ok(())
    }
}
