//! Experiment protocols.
//!
//! *Next location*: fingerprints are cut into stride-1 windows per path and
//! split chronologically per path; the network, the previous-position
//! baseline and k-NN on the last fingerprint predict the position after
//! each held-out window.
//!
//! *Semi-supervised*: a seeded random train/test split of the records; per
//! run seed, a labeled subset of the training part is drawn, the VAE is fit
//! on every training input, and M1, M2 and k-NN are fit on the labeled
//! subset only.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{report_from, rmse, run_seeds, Knn, RunHeader, RunReport, SeedResult, SeedScore};
use crate::cmdrnn::{Cmdrnn, CmdrnnConfig};
use crate::data::{make_windows, split_labeled, split_windows, train_test_split, Dataset, PathWindow, Scaler};
use crate::error::{Error, Result};
use crate::optim::OptimizerKind;
use crate::rng::{stream, Stream};
use crate::train::Trace;
use crate::vae::{train_predictor, PredictorKind, Vae, VaeConfig};

/// SHA-256 of the JSON form of `value`.
pub fn digest_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("configs serialize");
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// The configured CMDRNN variant.
    Network,
    PreviousPosition,
    Knn,
    M1,
    M2,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "network" => Self::Network,
            "previous" | "previous-position" => Self::PreviousPosition,
            "knn" => Self::Knn,
            "m1" => Self::M1,
            "m2" => Self::M2,
            _ => return Err(Error::Config(format!("unknown model {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SemiSupervisedSetup {
    pub vae: VaeConfig,
    pub labeled_fraction: f64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    NextLocation { network: CmdrnnConfig, train_fraction: f64 },
    SemiSupervised(SemiSupervisedSetup),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentSpec {
    pub model: ModelKind,
    pub protocol: Protocol,
    pub seeds: Vec<u64>,
    pub split_seed: u64,
    pub knn_k: usize,
    pub jobs: usize,
    pub timing: bool,
}

/// RMSE in scaled units and, with a scaler, in original units.
pub fn score(preds: &[[f64; 2]], targets: &[[f64; 2]], scaler: Option<&Scaler>) -> Result<SeedScore> {
    let scaled = rmse(preds, targets)?;
    let original = match scaler {
        Some(s) => {
            let p: Vec<[f64; 2]> = preds.iter().map(|p| s.unscale(*p)).collect();
            let t: Vec<[f64; 2]> = targets.iter().map(|t| s.unscale(*t)).collect();
            Some(rmse(&p, &t)?)
        }
        None => None,
    };
    Ok(SeedScore {
        rmse: scaled,
        rmse_original: original,
    })
}

/// Windows of the dataset split for the next-location protocol.
pub fn next_location_split(
    ds: &Dataset,
    memory: usize,
    train_fraction: f64,
) -> Result<(Vec<PathWindow>, Vec<PathWindow>)> {
    split_windows(make_windows(ds, memory)?, train_fraction)
}

/// Previous-position and k-NN scores on a window split.
pub fn next_location_baselines(
    train: &[PathWindow],
    test: &[PathWindow],
    k: usize,
    scaler: Option<&Scaler>,
) -> Result<(SeedScore, SeedScore)> {
    let targets: Vec<[f64; 2]> = test.iter().map(|w| w.target).collect();
    let previous: Vec<[f64; 2]> = test.iter().map(|w| w.last).collect();
    let knn = Knn::new(
        train.iter().map(|w| w.last_input().to_vec()).collect(),
        train.iter().map(|w| w.target).collect(),
        k,
    )?;
    let knn_preds: Vec<[f64; 2]> = test.iter().map(|w| knn.predict(w.last_input())).collect();
    Ok((
        score(&previous, &targets, scaler)?,
        score(&knn_preds, &targets, scaler)?,
    ))
}

/// Trains a network with `config` on the train windows and scores its point
/// predictions on the test windows.
pub fn next_location_network(
    config: &CmdrnnConfig,
    train: &[PathWindow],
    test: &[PathWindow],
    scaler: Option<&Scaler>,
) -> Result<(SeedScore, Trace)> {
    let mut model = Cmdrnn::build(config.clone())?;
    let report = model.fit(train)?;
    let preds = model.predict_points(test)?;
    let targets: Vec<[f64; 2]> = test.iter().map(|w| w.target).collect();
    Ok((score(&preds, &targets, scaler)?, report.trace))
}

/// The VAE of the semi-supervised protocol for one run seed, trained on
/// every input of the training split.
pub fn semi_supervised_vae(setup: &SemiSupervisedSetup, ds: &Dataset, split_seed: u64, seed: u64) -> Result<Vae> {
    let (train, _) = train_test_split(ds.len(), setup.test_fraction, split_seed)?;
    let mut vae = Vae::build(VaeConfig {
        seed,
        ..setup.vae.clone()
    })?;
    vae.train_unsupervised(&ds.inputs(&train))?;
    Ok(vae)
}

/// Scores of several semi-supervised models for one run seed, sharing one
/// trained VAE.
pub fn semi_supervised_scores(
    setup: &SemiSupervisedSetup,
    ds: &Dataset,
    split_seed: u64,
    seed: u64,
    knn_k: usize,
    models: &[ModelKind],
) -> Result<Vec<SeedScore>> {
    let needs_vae = models.iter().any(|m| matches!(m, ModelKind::M1 | ModelKind::M2));
    let vae = if needs_vae {
        Some(semi_supervised_vae(setup, ds, split_seed, seed)?)
    } else {
        None
    };
    scores_with_vae(setup, ds, split_seed, seed, knn_k, models, vae.as_ref())
}

fn scores_with_vae(
    setup: &SemiSupervisedSetup,
    ds: &Dataset,
    split_seed: u64,
    seed: u64,
    knn_k: usize,
    models: &[ModelKind],
    vae: Option<&Vae>,
) -> Result<Vec<SeedScore>> {
    let (train, test) = train_test_split(ds.len(), setup.test_fraction, split_seed)?;
    let labeled_pos = split_labeled(train.len(), setup.labeled_fraction, seed)?.labeled;
    let labeled: Vec<usize> = labeled_pos.iter().map(|&i| train[i]).collect();
    let test_targets = ds.targets(&test)?;
    let test_x = ds.inputs(&test);
    let label_y = ds.targets(&labeled)?;
    let label_x = ds.inputs(&labeled);
    models
        .iter()
        .map(|m| {
            let preds = match m {
                ModelKind::M1 | ModelKind::M2 => {
                    let vae = vae.ok_or_else(|| Error::Config("M1 and M2 need a trained VAE".into()))?;
                    let kind = if *m == ModelKind::M1 {
                        PredictorKind::M1
                    } else {
                        PredictorKind::M2
                    };
                    let (p, _) = train_predictor(kind, vae, &label_x, &label_y)?;
                    let mut rng = stream(seed, Stream::Evaluation);
                    p.predict(vae, &test_x, vae.config.samples, &mut rng)?
                }
                ModelKind::Knn => {
                    let k = knn_k.min(labeled.len());
                    let knn = Knn::new(
                        labeled.iter().map(|&i| ds.records[i].rssi.clone()).collect(),
                        label_y.clone(),
                        k,
                    )?;
                    test.iter().map(|&i| knn.predict(&ds.records[i].rssi)).collect()
                }
                other => {
                    return Err(Error::Config(format!("{other:?} is not a semi-supervised model")));
                }
            };
            score(&preds, &test_targets, ds.scaler.as_ref())
        })
        .collect()
}

fn model_label(spec: &ExperimentSpec) -> String {
    match (&spec.model, &spec.protocol) {
        (ModelKind::Network, Protocol::NextLocation { network, .. }) => network.variant.to_string(),
        (ModelKind::PreviousPosition, _) => "previous-position".into(),
        (ModelKind::Knn, _) => "knn".into(),
        (ModelKind::M1, _) => "m1".into(),
        (ModelKind::M2, _) => "m2".into(),
        (ModelKind::Network, _) => "network".into(),
    }
}

/// Runs one model over every seed and aggregates the held-out RMSE.
pub fn run_experiment(spec: &ExperimentSpec, ds: &Dataset) -> Result<RunReport> {
    let variable = match &spec.protocol {
        Protocol::SemiSupervised(s) => Some(("labeled-fraction".to_string(), s.labeled_fraction)),
        Protocol::NextLocation { .. } => None,
    };
    let header = RunHeader {
        model: model_label(spec),
        variable,
        config_digest: digest_json(&(&spec.model, &spec.protocol, spec.split_seed, spec.knn_k)),
        dataset: ds.provenance.to_string(),
        split_seed: spec.split_seed,
        knn_k: matches!(spec.model, ModelKind::Knn).then_some(spec.knn_k),
    };
    match &spec.protocol {
        Protocol::NextLocation {
            network,
            train_fraction,
        } => {
            let (train, test) = next_location_split(ds, network.memory, *train_fraction)?;
            run_seeds(header, &spec.seeds, spec.jobs, spec.timing, |seed| match spec.model {
                ModelKind::Network => {
                    let config = CmdrnnConfig {
                        seed,
                        ..network.clone()
                    };
                    next_location_network(&config, &train, &test, ds.scaler.as_ref()).map(|r| r.0)
                }
                ModelKind::PreviousPosition => {
                    Ok(next_location_baselines(&train, &test, spec.knn_k, ds.scaler.as_ref())?.0)
                }
                ModelKind::Knn => Ok(next_location_baselines(&train, &test, spec.knn_k, ds.scaler.as_ref())?.1),
                other => Err(Error::Config(format!("{other:?} does not predict next locations"))),
            })
        }
        Protocol::SemiSupervised(setup) => run_seeds(header, &spec.seeds, spec.jobs, spec.timing, |seed| {
            Ok(semi_supervised_scores(setup, ds, spec.split_seed, seed, spec.knn_k, &[spec.model])?[0])
        }),
    }
}

/// M1, M2 and k-NN reports for each labeled fraction. The VAE does not
/// see labels, so one VAE per seed serves every fraction. Seeds run one
/// after another.
pub fn labeled_fraction_table(
    setup: &SemiSupervisedSetup,
    ds: &Dataset,
    fractions: &[f64],
    seeds: &[u64],
    split_seed: u64,
    knn_k: usize,
) -> Result<Vec<RunReport>> {
    if fractions.is_empty() || seeds.is_empty() {
        return Err(Error::Config("need at least one fraction and one seed".into()));
    }
    let models = [ModelKind::M1, ModelKind::M2, ModelKind::Knn];
    // results[fraction][model] holds one entry per seed
    let mut results: Vec<Vec<Vec<SeedResult>>> = vec![vec![Vec::new(); models.len()]; fractions.len()];
    for &seed in seeds {
        let vae = semi_supervised_vae(setup, ds, split_seed, seed);
        for (fi, &fraction) in fractions.iter().enumerate() {
            let s = SemiSupervisedSetup {
                labeled_fraction: fraction,
                ..setup.clone()
            };
            let outcome = match &vae {
                Ok(v) => scores_with_vae(&s, ds, split_seed, seed, knn_k, &models, Some(v)),
                Err(e) => Err(Error::Data(format!("VAE training failed: {e}"))),
            };
            for (mi, slot) in results[fi].iter_mut().enumerate() {
                slot.push(match &outcome {
                    Ok(scores) => SeedResult {
                        seed,
                        rmse: Some(scores[mi].rmse),
                        rmse_original: scores[mi].rmse_original,
                        error: None,
                        wall_clock_s: None,
                    },
                    Err(e) => {
                        log::warn!("fraction {fraction}, seed {seed} failed: {e}");
                        SeedResult {
                            seed,
                            rmse: None,
                            rmse_original: None,
                            error: Some(e.to_string()),
                            wall_clock_s: None,
                        }
                    }
                });
            }
        }
    }
    let mut reports = Vec::new();
    for (&fraction, per_model) in fractions.iter().zip(results) {
        let s = SemiSupervisedSetup {
            labeled_fraction: fraction,
            ..setup.clone()
        };
        for (m, seeds) in models.iter().zip(per_model) {
            let header = RunHeader {
                model: format!("{m:?}").to_lowercase(),
                variable: Some(("labeled-fraction".into(), fraction)),
                config_digest: digest_json(&(m, &s, split_seed, knn_k)),
                dataset: ds.provenance.to_string(),
                split_seed,
                knn_k: (*m == ModelKind::Knn).then_some(knn_k),
            };
            reports.push(report_from(header, seeds)?);
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    MixtureCount,
    MemoryLength,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::MixtureCount => "mixture-count",
            SweepParam::MemoryLength => "memory-length",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture-count" => Ok(Self::MixtureCount),
            "memory-length" => Ok(Self::MemoryLength),
            _ => Err(Error::Config(format!(
                "unknown sweep parameter {s:?}; expected mixture-count or memory-length"
            ))),
        }
    }
}

/// One report per value of `param`, each aggregating the network's held-out
/// RMSE over `seeds`.
pub fn sweep(
    base: &CmdrnnConfig,
    ds: &Dataset,
    train_fraction: f64,
    param: SweepParam,
    values: &[usize],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<RunReport>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|&v| {
            let mut network = base.clone();
            match param {
                SweepParam::MixtureCount => network.mixtures = v,
                SweepParam::MemoryLength => network.memory = v,
            }
            network.validate()?;
            let spec = ExperimentSpec {
                model: ModelKind::Network,
                protocol: Protocol::NextLocation {
                    network,
                    train_fraction,
                },
                seeds: seeds.to_vec(),
                split_seed: 0,
                knn_k: 3,
                jobs,
                timing: false,
            };
            let mut report = run_experiment(&spec, ds)?;
            report.variable = Some((param.name().to_string(), v as f64));
            Ok(report)
        })
        .collect()
}

/// Training traces of labeled configurations on the same split and seed.
pub fn compare_traces(
    configs: &[(String, CmdrnnConfig)],
    ds: &Dataset,
    train_fraction: f64,
) -> Result<Vec<(String, Trace)>> {
    configs
        .iter()
        .map(|(label, c)| {
            let (train, _) = next_location_split(ds, c.memory, train_fraction)?;
            let mut model = Cmdrnn::build(c.clone())?;
            Ok((label.clone(), model.fit(&train)?.trace))
        })
        .collect()
}

/// Optimizer comparison: the same network under RMSProp and Adam.
pub fn optimizer_configs(base: &CmdrnnConfig) -> Vec<(String, CmdrnnConfig)> {
    [OptimizerKind::Rmsprop, OptimizerKind::Adam]
        .into_iter()
        .map(|k| {
            let mut c = base.clone();
            c.optimizer.kind = k;
            (k.to_string(), c)
        })
        .collect()
}

/// Wide CSV `epoch, <label>...` of per-epoch training loss.
pub fn write_traces_csv(traces: &[(String, Trace)], path: &Path) -> Result<()> {
    let mut out = String::from("epoch");
    for (label, _) in traces {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    let epochs = traces.iter().map(|(_, t)| t.epochs.len()).max().unwrap_or(0);
    for e in 0..epochs {
        out.push_str(&e.to_string());
        for (_, t) in traces {
            out.push(',');
            if let Some(r) = t.epochs.get(e) {
                out.push_str(&r.loss.to_string());
            }
        }
        out.push('\n');
    }
    std::fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}
