//! Metrics, the k-NN baseline and multi-seed reports.

mod experiment;

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use experiment::{
    compare_traces, digest_json, labeled_fraction_table, next_location_baselines, next_location_network,
    next_location_split, optimizer_configs, run_experiment, score, semi_supervised_scores, semi_supervised_vae, sweep,
    write_traces_csv, ExperimentSpec, ModelKind, Protocol, SemiSupervisedSetup, SweepParam,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// `sqrt(mean ‖p - t‖²)` over paired points.
pub fn rmse(preds: &[[f64; 2]], targets: &[[f64; 2]]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Data(format!(
            "rmse needs equal nonempty inputs, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    let sq: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2))
        .sum();
    Ok((sq / preds.len() as f64).sqrt())
}

/// k-nearest-neighbour regression on RSSI vectors by Euclidean distance.
#[derive(Debug, Clone)]
pub struct Knn {
    inputs: Vec<Vec<f64>>,
    positions: Vec<[f64; 2]>,
    k: usize,
}

impl Knn {
    pub fn new(inputs: Vec<Vec<f64>>, positions: Vec<[f64; 2]>, k: usize) -> Result<Self> {
        if inputs.is_empty() || inputs.len() != positions.len() {
            return Err(Error::Data("k-NN needs a nonempty, fully labeled training set".into()));
        }
        if k == 0 || k > inputs.len() {
            return Err(Error::Config(format!("k = {k} with {} training points", inputs.len())));
        }
        Ok(Self { inputs, positions, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Mean position of the `k` nearest stored inputs; equal distances go to
    /// the lower training index.
    pub fn predict(&self, query: &[f64]) -> [f64; 2] {
        let mut order: Vec<(f64, usize)> = self
            .inputs
            .iter()
            .enumerate()
            .map(|(i, x)| (x.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut acc = [0.0, 0.0];
        for &(_, i) in &order[..self.k] {
            acc[0] += self.positions[i][0];
            acc[1] += self.positions[i][1];
        }
        [acc[0] / self.k as f64, acc[1] / self.k as f64]
    }
}

/// Convenience wrapper for a one-off query.
pub fn knn_predict(inputs: &[Vec<f64>], positions: &[[f64; 2]], query: &[f64], k: usize) -> Result<[f64; 2]> {
    Ok(Knn::new(inputs.to_vec(), positions.to_vec(), k)?.predict(query))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(Summary {
        mean,
        std: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        count: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SeedResult {
    pub seed: u64,
    pub rmse: Option<f64>,
    /// RMSE converted back to the dataset's original units when the
    /// targets were scaled.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rmse_original: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_clock_s: Option<f64>,
}

/// What a single seed produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedScore {
    pub rmse: f64,
    pub rmse_original: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunReport {
    pub format_version: u32,
    pub model: String,
    /// Swept setting, e.g. `("labeled-fraction", 0.1)`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub variable: Option<(String, f64)>,
    pub config_digest: String,
    pub dataset: String,
    pub split_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub knn_k: Option<usize>,
    pub seeds: Vec<SeedResult>,
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub summary_original: Option<Summary>,
    pub failed_seeds: Vec<u64>,
}

/// Fields shared by every seed of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunHeader {
    pub model: String,
    pub variable: Option<(String, f64)>,
    pub config_digest: String,
    pub dataset: String,
    pub split_seed: u64,
    pub knn_k: Option<usize>,
}

/// Runs `f` once per seed on at most `jobs` threads. Failing seeds are
/// recorded and skipped; the call fails only if every seed fails.
pub fn run_seeds<F>(header: RunHeader, seeds: &[u64], jobs: usize, timing: bool, f: F) -> Result<RunReport>
where
    F: Fn(u64) -> Result<SeedScore> + Sync,
{
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let run_one = |&seed: &u64| {
        let start = Instant::now();
        let outcome = f(seed);
        let elapsed = timing.then(|| start.elapsed().as_secs_f64());
        match outcome {
            Ok(s) => SeedResult {
                seed,
                rmse: Some(s.rmse),
                rmse_original: s.rmse_original,
                error: None,
                wall_clock_s: elapsed,
            },
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                SeedResult {
                    seed,
                    rmse: None,
                    rmse_original: None,
                    error: Some(e.to_string()),
                    wall_clock_s: elapsed,
                }
            }
        }
    };
    let results: Vec<SeedResult> = if jobs <= 1 {
        seeds.iter().map(run_one).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(|| seeds.par_iter().map(run_one).collect())
    };
    report_from(header, results)
}

pub fn report_from(header: RunHeader, seeds: Vec<SeedResult>) -> Result<RunReport> {
    let ok: Vec<f64> = seeds.iter().filter_map(|s| s.rmse).collect();
    let failed_seeds: Vec<u64> = seeds.iter().filter(|s| s.rmse.is_none()).map(|s| s.seed).collect();
    let summary = summarize(&ok).ok_or_else(|| {
        let first = seeds.iter().find_map(|s| s.error.clone()).unwrap_or_default();
        Error::Data(format!("all {} seeds failed; first error: {first}", seeds.len()))
    })?;
    let original: Vec<f64> = seeds.iter().filter_map(|s| s.rmse_original).collect();
    let summary_original = if original.len() == ok.len() {
        summarize(&original)
    } else {
        None
    };
    Ok(RunReport {
        format_version: REPORT_FORMAT_VERSION,
        model: header.model,
        variable: header.variable,
        config_digest: header.config_digest,
        dataset: header.dataset,
        split_seed: header.split_seed,
        knn_k: header.knn_k,
        seeds,
        summary,
        summary_original,
        failed_seeds,
    })
}

/// Index of the report with the lowest mean RMSE; the earlier one on ties.
pub fn argmin(reports: &[RunReport]) -> Option<usize> {
    reports
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.summary.mean.total_cmp(&b.1.summary.mean).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Flat CSV: one row per seed, then one aggregate row per report.
pub fn write_reports_csv(reports: &[RunReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "model",
        "variable",
        "value",
        "seed",
        "rmse",
        "std",
        "rmse_original",
        "status",
    ])?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in reports {
        let (var, value) = match &r.variable {
            Some((n, v)) => (n.clone(), v.to_string()),
            None => (String::new(), String::new()),
        };
        for s in &r.seeds {
            let status = if s.error.is_some() { "failed" } else { "ok" };
            w.write_record([
                r.model.as_str(),
                &var,
                &value,
                &s.seed.to_string(),
                &fmt(s.rmse),
                "",
                &fmt(s.rmse_original),
                status,
            ])?;
        }
        w.write_record([
            r.model.as_str(),
            &var,
            &value,
            "aggregate",
            &r.summary.mean.to_string(),
            &r.summary.std.to_string(),
            &fmt(r.summary_original.map(|s| s.mean)),
            &format!("{}/{}", r.summary.count, r.seeds.len()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean ± std table keyed by the swept value.
pub fn write_sweep_csv(reports: &[RunReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variable", "value", "mean_rmse", "std_rmse", "seeds_ok", "best"])?;
    let best = argmin(reports);
    for (i, r) in reports.iter().enumerate() {
        let (var, value) = r.variable.clone().unwrap_or_default();
        w.write_record([
            var,
            value.to_string(),
            r.summary.mean.to_string(),
            r.summary.std.to_string(),
            r.summary.count.to_string(),
            (Some(i) == best).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
