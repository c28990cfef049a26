//! Fingerprint datasets: loading, preprocessing, windowing, splits and a
//! synthetic generator.

mod csv_io;
mod split;
mod synth;
mod windows;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use csv_io::{load_csv, write_csv, GenericSchema, Schema};
pub use split::{split_labeled, train_test_split, LabeledSplit};
pub use synth::{path_loss_rssi, synth_corridor, SynthConfig, DETECTION_THRESHOLD};
pub use windows::{make_windows, split_windows, PathWindow};

/// Value used by the public datasets for an access point that was not heard.
pub const UNDETECTED: f64 = 100.0;
/// Floor of the RSSI scale used by the optional normalization.
pub const RSSI_FLOOR: f64 = -110.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Tampere,
    Ujiindoorloc,
    Synthetic,
    Generic,
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Provenance::Tampere => "tampere",
            Provenance::Ujiindoorloc => "ujiindoorloc",
            Provenance::Synthetic => "synthetic",
            Provenance::Generic => "generic",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub building: Option<i64>,
    pub floor: Option<i64>,
    pub path: Option<u32>,
    pub timestamp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    pub rssi: Vec<f64>,
    pub position: Option<[f64; 2]>,
    pub meta: Metadata,
}

/// Per-coordinate min–max scaling of positions onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Scaler {
    pub fn fit<'a>(positions: impl IntoIterator<Item = &'a [f64; 2]>) -> Option<Self> {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        let mut any = false;
        for p in positions {
            any = true;
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        any.then_some(Self { min, max })
    }

    /// Width of each coordinate range; a constant coordinate gets width 1 so
    /// the map stays invertible.
    pub fn span(&self) -> [f64; 2] {
        let w = |a: usize| {
            let d = self.max[a] - self.min[a];
            if d > 0.0 {
                d
            } else {
                1.0
            }
        };
        [w(0), w(1)]
    }

    pub fn scale(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.span();
        [(p[0] - self.min[0]) / s[0], (p[1] - self.min[1]) / s[1]]
    }

    pub fn unscale(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.span();
        [self.min[0] + p[0] * s[0], self.min[1] + p[1] * s[1]]
    }
}

/// Per-WAP standardization `(x - mean) / std`. A constant column keeps
/// std 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Option<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for row in rows {
            n += 1;
            for (j, &v) in row.iter().enumerate() {
                sum[j] += v;
                sq[j] += v * v;
            }
        }
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Some(Self { mean, std })
    }

    pub fn apply(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub sentinel_cleared: bool,
    pub deduplicated: bool,
    pub normalized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<FingerprintRecord>,
    pub input_dim: usize,
    pub provenance: Provenance,
    pub scaler: Option<Scaler>,
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
    pub state: PreprocessState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessOptions {
    /// `None` removes duplicates for UJIIndoorLoc only.
    pub dedup: Option<bool>,
    /// Map detected RSSI onto `(x + 110) / 110`; undetected stays 0.
    pub normalize_rssi: bool,
    /// Standardize each WAP column after the steps above.
    #[serde(default)]
    pub standardize_rssi: bool,
    pub scale_targets: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self {
            dedup: None,
            normalize_rssi: false,
            standardize_rssi: false,
            scale_targets: true,
        }
    }
}

impl Dataset {
    pub fn new(records: Vec<FingerprintRecord>, input_dim: usize, provenance: Provenance) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Data("dataset has no records".into()));
        }
        if let Some(i) = records.iter().position(|r| r.rssi.len() != input_dim) {
            return Err(Error::Data(format!(
                "record {i} has {} RSSI values, expected {input_dim}",
                records[i].rssi.len()
            )));
        }
        Ok(Self {
            records,
            input_dim,
            provenance,
            scaler: None,
            standardizer: None,
            state: PreprocessState::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.position.is_some())
    }

    /// Position of record `i`, failing if it has none.
    pub fn position(&self, i: usize) -> Result<[f64; 2]> {
        self.records[i]
            .position
            .ok_or_else(|| Error::Data(format!("record {i} has no position")))
    }

    /// Stacks the RSSI vectors of `indices` into an `[n, input_dim]` tensor.
    pub fn inputs(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.input_dim);
        for &i in indices {
            data.extend_from_slice(&self.records[i].rssi);
        }
        Tensor::from_vec(&[indices.len(), self.input_dim], data)
    }

    pub fn targets(&self, indices: &[usize]) -> Result<Vec<[f64; 2]>> {
        indices.iter().map(|&i| self.position(i)).collect()
    }

    /// Undoes target scaling when a scaler is present.
    pub fn to_original_units(&self, p: [f64; 2]) -> [f64; 2] {
        match &self.scaler {
            Some(s) => s.unscale(p),
            None => p,
        }
    }

    /// Applies the preprocessing steps not already applied, so repeated
    /// calls with the same options are no-ops.
    pub fn preprocess(&self, options: &PreprocessOptions) -> Dataset {
        let mut ds = self.clone();
        if !ds.state.sentinel_cleared {
            for r in &mut ds.records {
                r.rssi.iter_mut().filter(|v| **v == UNDETECTED).for_each(|v| *v = 0.0);
            }
            ds.state.sentinel_cleared = true;
        }
        let dedup = options.dedup.unwrap_or(ds.provenance == Provenance::Ujiindoorloc);
        if dedup && !ds.state.deduplicated {
            let mut seen = HashSet::new();
            ds.records.retain(|r| {
                let mut key: Vec<u64> = r.rssi.iter().map(|v| v.to_bits()).collect();
                match r.position {
                    Some([x, y]) => key.extend([1, x.to_bits(), y.to_bits()]),
                    None => key.push(0),
                }
                seen.insert(key)
            });
            ds.state.deduplicated = true;
        }
        if options.normalize_rssi && !ds.state.normalized {
            for r in &mut ds.records {
                for v in r.rssi.iter_mut().filter(|v| **v != 0.0) {
                    *v = ((*v - RSSI_FLOOR) / -RSSI_FLOOR).clamp(0.0, 1.0);
                }
            }
            ds.state.normalized = true;
        }
        if options.standardize_rssi && ds.standardizer.is_none() {
            if let Some(st) = Standardizer::fit(ds.records.iter().map(|r| r.rssi.as_slice()), ds.input_dim) {
                ds.records.iter_mut().for_each(|r| st.apply(&mut r.rssi));
                ds.standardizer = Some(st);
            }
        }
        if options.scale_targets && ds.scaler.is_none() {
            if let Some(scaler) = Scaler::fit(ds.records.iter().filter_map(|r| r.position.as_ref())) {
                for r in &mut ds.records {
                    if let Some(p) = r.position.as_mut() {
                        *p = scaler.scale(*p);
                    }
                }
                ds.scaler = Some(scaler);
            }
        }
        ds
    }

    /// Scales targets with a scaler fitted elsewhere, e.g. the one stored
    /// with a trained model.
    pub fn apply_scaler(&self, scaler: Scaler) -> Result<Dataset> {
        if self.scaler.is_some() {
            return Err(Error::Data("targets are already scaled".into()));
        }
        let mut ds = self.clone();
        for p in ds.records.iter_mut().filter_map(|r| r.position.as_mut()) {
            *p = scaler.scale(*p);
        }
        ds.scaler = Some(scaler);
        Ok(ds)
    }

    /// Standardizes inputs with statistics fitted elsewhere.
    pub fn apply_standardizer(&self, st: Standardizer) -> Result<Dataset> {
        if self.standardizer.is_some() {
            return Err(Error::Data("inputs are already standardized".into()));
        }
        if st.mean.len() != self.input_dim {
            return Err(Error::Schema(format!(
                "standardizer covers {} inputs, data has {}",
                st.mean.len(),
                self.input_dim
            )));
        }
        let mut ds = self.clone();
        ds.records.iter_mut().for_each(|r| st.apply(&mut r.rssi));
        ds.standardizer = Some(st);
        Ok(ds)
    }

    /// Subset of records in the given order; preprocessing state and scaler
    /// are kept.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Dataset {
        Dataset {
            records: Vec::new(),
            input_dim: self.input_dim,
            provenance: self.provenance,
            scaler: self.scaler,
            standardizer: self.standardizer.clone(),
            state: self.state,
        }
    }
}
