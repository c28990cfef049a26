//! Subcommand bodies. Each one resolves its configuration, writes it to
//! `out/resolved-config.toml`, and then writes its artifacts under `out`.

use std::fs;
use std::path::{Path, PathBuf};

use probloc::checkpoint::{Checkpoint, ModelFamily, SemiSupervised};
use probloc::cmdrnn::{Cmdrnn, CmdrnnConfig, Variant};
use probloc::data::{
    load_csv, make_windows, split_labeled, synth_corridor, train_test_split, write_csv, Dataset, PreprocessOptions,
};
use probloc::eval::{
    compare_traces, digest_json, labeled_fraction_table, next_location_split, optimizer_configs, report_from,
    run_experiment, score, sweep, write_reports_csv, write_sweep_csv, write_traces_csv, ExperimentSpec, ModelKind,
    Protocol, RunHeader, RunReport, SeedResult, SeedScore, SemiSupervisedSetup, SweepParam,
};
use probloc::rng::{stream, Stream};
use probloc::vae::{Predictor, Vae};
use probloc::{Error, Result};

use crate::config::{RunConfig, RESOLVED_CONFIG};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmd {
    TrainCmdrnn,
    TrainVae,
    TrainPredictor,
    Predict,
    Evaluate,
    Sweep,
    ExportLatent,
    SynthData,
    Compare,
    Experiment,
}

const DEFAULT_FRACTIONS: [f64; 7] = [0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.8];

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_config(&mut self, input_dim: usize) -> Result<()> {
        self.cfg.resolve(input_dim)?;
        fs::write(self.path(RESOLVED_CONFIG), self.cfg.to_toml()?)?;
        Ok(())
    }

    fn raw_dataset(&self) -> Result<Dataset> {
        if self.cfg.is_synthetic() {
            return synth_corridor(&self.cfg.synth_config());
        }
        let path = self
            .cfg
            .data
            .as_ref()
            .ok_or_else(|| usage("--data is required unless --schema synthetic"))?;
        load_csv(path, &self.cfg.csv_schema()?)
    }

    fn dataset(&self) -> Result<Dataset> {
        Ok(self.raw_dataset()?.preprocess(&self.cfg.preprocess_options()))
    }

    /// The dataset prepared the way the checkpointed model was trained,
    /// with targets on its scale.
    fn dataset_for(&self, ckpt: &Checkpoint) -> Result<Dataset> {
        let options = PreprocessOptions {
            standardize_rssi: false,
            scale_targets: false,
            ..ckpt.preprocess
        };
        let mut ds = self.raw_dataset()?.preprocess(&options);
        if let Some(st) = &ckpt.standardizer {
            ds = ds.apply_standardizer(st.clone())?;
        }
        match ckpt.scaler {
            Some(s) => ds.apply_scaler(s),
            None => Ok(ds),
        }
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let path = self
            .cfg
            .checkpoint
            .as_ref()
            .ok_or_else(|| usage("--checkpoint is required"))?;
        Checkpoint::load(path)
    }

    fn write_reports(&self, reports: &[RunReport]) -> Result<()> {
        let mut text = serde_json::to_string_pretty(reports)?;
        text.push('\n');
        fs::write(self.path("report.json"), text)?;
        write_reports_csv(reports, &self.path("report.csv"))
    }

    fn header(&self, model: String, dataset: &Dataset, digest: String) -> RunHeader {
        RunHeader {
            model,
            variable: None,
            config_digest: digest,
            dataset: dataset.provenance.to_string(),
            split_seed: self.cfg.split_seed.unwrap_or(0),
            knn_k: None,
        }
    }

    /// Single-seed report for a trained model.
    fn single_report(&self, header: RunHeader, seed: u64, s: SeedScore) -> Result<()> {
        let report = report_from(
            header,
            vec![SeedResult {
                seed,
                rmse: Some(s.rmse),
                rmse_original: s.rmse_original,
                error: None,
                wall_clock_s: None,
            }],
        )?;
        self.write_reports(&[report])
    }

    /// Training/test record indices and the labeled part of the training set.
    fn semi_supervised_split(&self, ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
        let (train, test) = train_test_split(ds.len(), self.cfg.test_fraction(), self.cfg.split_seed.unwrap_or(0))?;
        let labeled = split_labeled(train.len(), self.cfg.labeled_fraction(), self.cfg.seed())?
            .labeled
            .iter()
            .map(|&i| train[i])
            .collect();
        Ok((labeled, test))
    }
}

pub fn execute(cmd: Cmd, file: Option<&Path>, flags: &RunConfig) -> Result<()> {
    let cfg = match file {
        Some(p) => RunConfig::from_file(p)?.overlay(flags)?,
        None => flags.clone(),
    };
    let out = cfg.out.clone().ok_or_else(|| usage("--out is required"))?;
    fs::create_dir_all(&out)?;
    let mut run = Run { cfg, out };
    match cmd {
        Cmd::SynthData => synth_data(&mut run),
        Cmd::TrainCmdrnn => train_cmdrnn(&mut run),
        Cmd::TrainVae => train_vae(&mut run),
        Cmd::TrainPredictor => train_predictor(&mut run),
        Cmd::Predict => predict(&mut run),
        Cmd::Evaluate => evaluate(&mut run),
        Cmd::Sweep => sweep_cmd(&mut run),
        Cmd::Experiment => experiment(&mut run),
        Cmd::Compare => compare(&mut run),
        Cmd::ExportLatent => export_latent(&mut run),
    }
}

fn synth_data(run: &mut Run) -> Result<()> {
    run.cfg.schema = Some("synthetic".into());
    let ds = synth_corridor(&run.cfg.synth_config())?;
    run.write_config(ds.input_dim)?;
    write_csv(&ds, &run.path("synthetic.csv"))
}

fn save_checkpoint(run: &Run, mut ckpt: Checkpoint, ds: &Dataset) -> Result<()> {
    ckpt.standardizer = ds.standardizer.clone();
    ckpt.save(&run.path("checkpoint.json"))
}

fn train_cmdrnn(run: &mut Run) -> Result<()> {
    let ds = run.dataset()?;
    run.write_config(ds.input_dim)?;
    let config = run.cfg.cmdrnn_config(ds.input_dim)?;
    let (train, test) = next_location_split(&ds, config.memory, run.cfg.train_fraction())?;
    let digest = digest_json(&(&config, run.cfg.train_fraction()));
    let mut model = Cmdrnn::build(config)?;
    model.scaler = ds.scaler;
    let fit = model.fit(&train)?;
    fit.trace.write_csv(&run.path("trace.csv"))?;
    if let Some(pre) = &fit.pretrain {
        pre.write_csv(&run.path("pretrain-trace.csv"))?;
    }
    save_checkpoint(run, model.to_checkpoint(run.cfg.preprocess_options())?, &ds)?;
    if !test.is_empty() {
        let preds = model.predict_points(&test)?;
        let targets: Vec<[f64; 2]> = test.iter().map(|w| w.target).collect();
        let s = score(&preds, &targets, ds.scaler.as_ref())?;
        run.single_report(
            run.header(model.config.variant.to_string(), &ds, digest),
            model.config.seed,
            s,
        )?;
    }
    Ok(())
}

fn train_vae(run: &mut Run) -> Result<()> {
    let ds = run.dataset()?;
    run.write_config(ds.input_dim)?;
    let config = run.cfg.vae_config(ds.input_dim)?;
    let kind = run.cfg.predictor_kind()?;
    let (train, test) = train_test_split(ds.len(), run.cfg.test_fraction(), run.cfg.split_seed.unwrap_or(0))?;
    let (labeled, _) = run.semi_supervised_split(&ds)?;
    let digest = digest_json(&(&config, kind, run.cfg.labeled_fraction(), run.cfg.test_fraction()));
    let mut vae = Vae::build(config)?;
    vae.train_unsupervised(&ds.inputs(&train))?
        .write_csv(&run.path("trace.csv"))?;
    let (predictor, trace) = probloc::vae::train_predictor(kind, &vae, &ds.inputs(&labeled), &ds.targets(&labeled)?)?;
    trace.write_csv(&run.path("predictor-trace.csv"))?;
    finish_semi_supervised(
        run,
        &ds,
        SemiSupervised {
            vae,
            predictor: Some(predictor),
            scaler: ds.scaler,
        },
        run.cfg.preprocess_options(),
        &test,
        digest,
    )
}

fn finish_semi_supervised(
    run: &Run,
    ds: &Dataset,
    model: SemiSupervised,
    preprocess: PreprocessOptions,
    test: &[usize],
    digest: String,
) -> Result<()> {
    save_checkpoint(run, model.to_checkpoint(preprocess)?, ds)?;
    let p = model.predictor.as_ref().expect("trained above");
    if !test.is_empty() {
        let seed = model.vae.config.seed;
        let preds = p.predict(
            &model.vae,
            &ds.inputs(test),
            model.vae.config.samples,
            &mut stream(seed, Stream::Evaluation),
        )?;
        let s = score(&preds, &ds.targets(test)?, ds.scaler.as_ref())?;
        run.single_report(run.header(p.kind.to_string(), ds, digest), seed, s)?;
    }
    Ok(())
}

fn train_predictor(run: &mut Run) -> Result<()> {
    let ckpt = run.checkpoint()?;
    let mut model = SemiSupervised::from_checkpoint(&ckpt)?;
    let ds = run.dataset_for(&ckpt)?;
    if ds.input_dim != model.vae.config.input_dim {
        return Err(Error::Schema(format!(
            "data has {} inputs, the checkpoint expects {}",
            ds.input_dim, model.vae.config.input_dim
        )));
    }
    // Predictor settings given explicitly override the checkpoint's.
    let c = &mut model.vae.config;
    let f = &run.cfg;
    if let Some(v) = &f.predictor_hidden {
        c.predictor_hidden = v.clone();
    }
    c.sigma_y = f.sigma_y.unwrap_or(c.sigma_y);
    c.samples = f.samples.unwrap_or(c.samples);
    c.predictor_epochs = f.predictor_epochs.unwrap_or(c.predictor_epochs);
    if f.m2_input.is_some() {
        c.m2_input = f.vae_config(ds.input_dim)?.m2_input;
    }
    if f.seed.is_none() {
        run.cfg.seed = Some(ckpt.seed);
    }
    run.write_config(ds.input_dim)?;
    let kind = run.cfg.predictor_kind()?;
    let (labeled, test) = run.semi_supervised_split(&ds)?;
    let c = model.vae.config.clone();
    let mut predictor = Predictor::new(kind, &c)?;
    let trace = predictor.fit(
        &model.vae,
        &ds.inputs(&labeled),
        &ds.targets(&labeled)?,
        c.predictor_epochs,
        c.batch_size,
        run.cfg.seed(),
        c.optimizer,
    )?;
    trace.write_csv(&run.path("predictor-trace.csv"))?;
    model.predictor = Some(predictor);
    let digest = digest_json(&(&c, kind, run.cfg.labeled_fraction(), run.cfg.test_fraction()));
    finish_semi_supervised(run, &ds, model, ckpt.preprocess, &test, digest)
}

fn write_predictions(
    path: &Path,
    keys: &[String],
    preds: &[[f64; 2]],
    truth: &[Option<[f64; 2]>],
    ds: &Dataset,
) -> Result<()> {
    let mut text = String::from("record,x,y,true_x,true_y\n");
    for ((k, p), t) in keys.iter().zip(preds).zip(truth) {
        let p = ds.to_original_units(*p);
        let t = t.map(|t| ds.to_original_units(t));
        let (tx, ty) = t.map(|t| (t[0].to_string(), t[1].to_string())).unwrap_or_default();
        text.push_str(&format!("{k},{},{},{tx},{ty}\n", p[0], p[1]));
    }
    fs::write(path, text)?;
    Ok(())
}

fn predict(run: &mut Run) -> Result<()> {
    let ckpt = run.checkpoint()?;
    let ds = run.dataset_for(&ckpt)?;
    run.write_config(ds.input_dim)?;
    match ckpt.family {
        ModelFamily::Cmdrnn => {
            let model = Cmdrnn::from_checkpoint(&ckpt)?;
            let windows = make_windows(&ds, model.config.memory)?;
            let preds = model.predict_points(&windows)?;
            let keys: Vec<String> = windows
                .iter()
                .map(|w| format!("{}:{}", w.path, w.start + w.len))
                .collect();
            let truth: Vec<Option<[f64; 2]>> = windows.iter().map(|w| Some(w.target)).collect();
            write_predictions(&run.path("predictions.csv"), &keys, &preds, &truth, &ds)
        }
        ModelFamily::Vae => {
            let model = SemiSupervised::from_checkpoint(&ckpt)?;
            let p = model
                .predictor
                .as_ref()
                .ok_or_else(|| usage("checkpoint has no predictor; run train-predictor first"))?;
            let all: Vec<usize> = (0..ds.len()).collect();
            let mut rng = stream(ckpt.seed, Stream::Evaluation);
            let preds = p.predict(&model.vae, &ds.inputs(&all), model.vae.config.samples, &mut rng)?;
            let keys: Vec<String> = all.iter().map(|i| i.to_string()).collect();
            let truth: Vec<Option<[f64; 2]>> = ds.records.iter().map(|r| r.position).collect();
            write_predictions(&run.path("predictions.csv"), &keys, &preds, &truth, &ds)
        }
    }
}

/// `model` as a network variant or a baseline/semi-supervised model kind.
fn parse_model(name: &str) -> Result<(ModelKind, Option<Variant>)> {
    if let Ok(v) = name.parse::<Variant>() {
        return Ok((ModelKind::Network, Some(v)));
    }
    name.parse::<ModelKind>().map(|k| (k, None)).map_err(|_| {
        usage(format!(
            "model: unknown model {name:?}; expected a network variant, previous-position, knn, m1 or m2"
        ))
    })
}

fn semi_supervised_protocol(run: &Run, kind: ModelKind) -> Result<bool> {
    match run.cfg.protocol.as_deref() {
        Some("next-location") => Ok(false),
        Some("semi-supervised") => Ok(true),
        Some(other) => Err(usage(format!(
            "protocol: unknown protocol {other:?}; expected next-location or semi-supervised"
        ))),
        None => Ok(matches!(kind, ModelKind::M1 | ModelKind::M2 | ModelKind::Knn)),
    }
}

fn evaluate(run: &mut Run) -> Result<()> {
    if run.cfg.checkpoint.is_some() {
        return evaluate_checkpoint(run);
    }
    let name = run.cfg.model.clone().unwrap_or_else(|| "cmdrnn".into());
    let (kind, variant) = parse_model(&name)?;
    if let Some(v) = variant {
        run.cfg.variant = Some(v.to_string());
    }
    let ds = run.dataset()?;
    run.write_config(ds.input_dim)?;
    let semi = semi_supervised_protocol(run, kind)?;
    if semi && kind == ModelKind::Network || !semi && matches!(kind, ModelKind::M1 | ModelKind::M2) {
        return Err(usage(format!("model {name} does not fit the chosen protocol")));
    }
    let protocol = if semi {
        Protocol::SemiSupervised(SemiSupervisedSetup {
            vae: run.cfg.vae_config(ds.input_dim)?,
            labeled_fraction: run.cfg.labeled_fraction(),
            test_fraction: run.cfg.test_fraction(),
        })
    } else {
        Protocol::NextLocation {
            network: run.cfg.cmdrnn_config(ds.input_dim)?,
            train_fraction: run.cfg.train_fraction(),
        }
    };
    let spec = ExperimentSpec {
        model: kind,
        protocol,
        seeds: run.cfg.seed_list(),
        split_seed: run.cfg.split_seed.unwrap_or(0),
        knn_k: run.cfg.knn_k(),
        jobs: run.cfg.jobs(),
        timing: run.cfg.timing.unwrap_or(false),
    };
    let report = run_experiment(&spec, &ds)?;
    run.write_reports(&[report])
}

fn evaluate_checkpoint(run: &mut Run) -> Result<()> {
    let ckpt = run.checkpoint()?;
    let ds = run.dataset_for(&ckpt)?;
    run.write_config(ds.input_dim)?;
    let digest = digest_json(&ckpt.config);
    match ckpt.family {
        ModelFamily::Cmdrnn => {
            let model = Cmdrnn::from_checkpoint(&ckpt)?;
            if let Some(m) = &run.cfg.model {
                if m != model.config.variant.name() {
                    return Err(usage(format!(
                        "model {m} does not match the checkpoint's {}",
                        model.config.variant
                    )));
                }
            }
            let (_, test) = next_location_split(&ds, model.config.memory, run.cfg.train_fraction())?;
            let preds = model.predict_points(&test)?;
            let targets: Vec<[f64; 2]> = test.iter().map(|w| w.target).collect();
            let s = score(&preds, &targets, ds.scaler.as_ref())?;
            run.single_report(run.header(model.config.variant.to_string(), &ds, digest), ckpt.seed, s)
        }
        ModelFamily::Vae => {
            let model = SemiSupervised::from_checkpoint(&ckpt)?;
            let p = model
                .predictor
                .as_ref()
                .ok_or_else(|| usage("checkpoint has no predictor; run train-predictor first"))?;
            if let Some(m) = &run.cfg.model {
                if *m != p.kind.to_string() {
                    return Err(usage(format!("model {m} does not match the checkpoint's {}", p.kind)));
                }
            }
            let (_, test) = train_test_split(ds.len(), run.cfg.test_fraction(), run.cfg.split_seed.unwrap_or(0))?;
            let mut rng = stream(ckpt.seed, Stream::Evaluation);
            let preds = p.predict(&model.vae, &ds.inputs(&test), model.vae.config.samples, &mut rng)?;
            let s = score(&preds, &ds.targets(&test)?, ds.scaler.as_ref())?;
            run.single_report(run.header(p.kind.to_string(), &ds, digest), ckpt.seed, s)
        }
    }
}

fn sweep_cmd(run: &mut Run) -> Result<()> {
    let param: SweepParam = run
        .cfg
        .param
        .as_deref()
        .ok_or_else(|| usage("--param is required"))?
        .parse()?;
    let values = run.cfg.values.clone().ok_or_else(|| usage("--values is required"))?;
    let ds = run.dataset()?;
    run.write_config(ds.input_dim)?;
    let base = run.cfg.cmdrnn_config(ds.input_dim)?;
    let reports = sweep(
        &base,
        &ds,
        run.cfg.train_fraction(),
        param,
        &values,
        &run.cfg.seed_list(),
        run.cfg.jobs(),
    )?;
    write_sweep_csv(&reports, &run.path("sweep.csv"))?;
    run.write_reports(&reports)
}

fn experiment(run: &mut Run) -> Result<()> {
    let fractions = run.cfg.fractions.clone().unwrap_or_else(|| DEFAULT_FRACTIONS.to_vec());
    let ds = run.dataset()?;
    run.write_config(ds.input_dim)?;
    let setup = SemiSupervisedSetup {
        vae: run.cfg.vae_config(ds.input_dim)?,
        labeled_fraction: run.cfg.labeled_fraction(),
        test_fraction: run.cfg.test_fraction(),
    };
    let reports = labeled_fraction_table(
        &setup,
        &ds,
        &fractions,
        &run.cfg.seed_list(),
        run.cfg.split_seed.unwrap_or(0),
        run.cfg.knn_k(),
    )?;
    run.write_reports(&reports)
}

fn compare(run: &mut Run) -> Result<()> {
    let ds = run.dataset()?;
    run.write_config(ds.input_dim)?;
    let base = run.cfg.cmdrnn_config(ds.input_dim)?;
    let configs: Vec<(String, CmdrnnConfig)> = match run.cfg.compare.as_deref().unwrap_or("optimizers") {
        "optimizers" => optimizer_configs(&base),
        "feature-detectors" => [Variant::RnnMdn, Variant::AeRnnMdn, Variant::Cmdrnn]
            .into_iter()
            .map(|v| {
                (
                    v.to_string(),
                    CmdrnnConfig {
                        variant: v,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        other => {
            return Err(usage(format!(
                "compare: unknown comparison {other:?}; expected optimizers or feature-detectors"
            )))
        }
    };
    let traces = compare_traces(&configs, &ds, run.cfg.train_fraction())?;
    write_traces_csv(&traces, &run.path("traces.csv"))
}

fn export_latent(run: &mut Run) -> Result<()> {
    let ckpt = run.checkpoint()?;
    let model = SemiSupervised::from_checkpoint(&ckpt)?;
    let ds = run.dataset_for(&ckpt)?;
    run.write_config(ds.input_dim)?;
    model.vae.write_latent_csv(&ds, &run.path("latent.csv"))?;
    Ok(())
}
