use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// `len` consecutive fingerprints of one path and the position that follows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWindow {
    /// Row-major `[len, input_dim]`.
    pub inputs: Vec<f64>,
    pub len: usize,
    pub target: [f64; 2],
    /// Position at the last input step.
    pub last: [f64; 2],
    pub path: u32,
    /// Dataset index of the first input record.
    pub start: usize,
}

impl PathWindow {
    pub fn step(&self, t: usize) -> &[f64] {
        let d = self.inputs.len() / self.len;
        &self.inputs[t * d..(t + 1) * d]
    }

    pub fn last_input(&self) -> &[f64] {
        self.step(self.len - 1)
    }
}

/// Groups records by path id (records without one form path 0), in order of
/// first appearance.
fn paths(ds: &Dataset) -> Vec<(u32, Vec<usize>)> {
    let mut out: Vec<(u32, Vec<usize>)> = Vec::new();
    for (i, r) in ds.records.iter().enumerate() {
        let id = r.meta.path.unwrap_or(0);
        match out.iter_mut().find(|(p, _)| *p == id) {
            Some((_, v)) => v.push(i),
            None => out.push((id, vec![i])),
        }
    }
    out
}

/// Stride-1 windows of `len` inputs within each path; a path of `n` records
/// yields `n - len` windows. Paths too short for one window are skipped.
pub fn make_windows(ds: &Dataset, len: usize) -> Result<Vec<PathWindow>> {
    if len == 0 {
        return Err(Error::Config("memory length must be at least 1".into()));
    }
    let mut windows = Vec::new();
    for (path, idx) in paths(ds) {
        if idx.len() <= len {
            log::warn!(
                "path {path} has {} records, needs {} for a window; skipped",
                idx.len(),
                len + 1
            );
            continue;
        }
        for s in 0..idx.len() - len {
            let span = &idx[s..s + len];
            let mut inputs = Vec::with_capacity(len * ds.input_dim);
            for &i in span {
                inputs.extend_from_slice(&ds.records[i].rssi);
            }
            windows.push(PathWindow {
                inputs,
                len,
                target: ds.position(idx[s + len])?,
                last: ds.position(span[len - 1])?,
                path,
                start: span[0],
            });
        }
    }
    if windows.is_empty() {
        return Err(Error::Data(format!("no path is longer than the memory length {len}")));
    }
    Ok(windows)
}

/// Chronological split per path: the first `train_fraction` of each path's
/// windows train, the rest test.
pub fn split_windows(windows: Vec<PathWindow>, train_fraction: f64) -> Result<(Vec<PathWindow>, Vec<PathWindow>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut counts: Vec<(u32, usize)> = Vec::new();
    for w in &windows {
        match counts.iter_mut().find(|(p, _)| *p == w.path) {
            Some((_, c)) => *c += 1,
            None => counts.push((w.path, 1)),
        }
    }
    let mut seen: Vec<(u32, usize)> = counts.iter().map(|(p, _)| (*p, 0)).collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for w in windows {
        let total = counts.iter().find(|(p, _)| *p == w.path).map(|c| c.1).unwrap_or(0);
        let cut = ((total as f64 * train_fraction).round() as usize).clamp(1, total.saturating_sub(1).max(1));
        let slot = seen.iter_mut().find(|(p, _)| *p == w.path).expect("path counted");
        if slot.1 < cut {
            train.push(w);
        } else {
            test.push(w);
        }
        slot.1 += 1;
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("too few windows for a train/test split".into()));
    }
    Ok((train, test))
}
