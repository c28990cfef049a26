use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, FingerprintRecord, Metadata, Provenance, UNDETECTED};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

/// Readings weaker than this (dBm) are reported as undetected.
pub const DETECTION_THRESHOLD: f64 = -95.0;
const RSSI_AT_1M: f64 = -30.0;
const PATH_LOSS_EXPONENT: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SynthConfig {
    pub aps: usize,
    /// Records per path.
    pub steps: usize,
    pub paths: usize,
    /// Standard deviation of the additive RSSI noise, dB.
    pub noise_db: f64,
    pub width: f64,
    pub height: f64,
    pub step_length: f64,
    /// Standard deviation of the per-step heading change, radians.
    pub turn_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            aps: 20,
            steps: 2000,
            paths: 1,
            noise_db: 2.0,
            width: 60.0,
            height: 20.0,
            step_length: 2.0,
            turn_std: 0.3,
            seed: 0,
        }
    }
}

/// Log-distance path loss, clamped to `[-110, -30]` dBm.
pub fn path_loss_rssi(distance: f64, noise: f64) -> f64 {
    let d = distance.max(1e-9);
    (RSSI_AT_1M - 10.0 * PATH_LOSS_EXPONENT * d.log10() + noise).clamp(-110.0, RSSI_AT_1M)
}

/// Walks a smooth random path (persistent heading, reflecting walls) through
/// a rectangle of access points and records noisy path-loss fingerprints.
/// The result is raw: undetected readings carry the sentinel value.
pub fn synth_corridor(config: &SynthConfig) -> Result<Dataset> {
    if config.aps < 3 {
        return Err(Error::Config("synthetic data needs at least 3 access points".into()));
    }
    if config.steps == 0 || config.paths == 0 {
        return Err(Error::Config(
            "synthetic data needs at least one step and one path".into(),
        ));
    }
    if !(config.width > 0.0 && config.height > 0.0 && config.step_length > 0.0 && config.noise_db >= 0.0) {
        return Err(Error::Config("synthetic geometry must be positive".into()));
    }
    let mut rng = substream(config.seed, Stream::Synthetic, 0);
    let aps: Vec<[f64; 2]> = (0..config.aps)
        .map(|_| [rng.random::<f64>() * config.width, rng.random::<f64>() * config.height])
        .collect();
    let mut records = Vec::with_capacity(config.steps * config.paths);
    for path in 0..config.paths {
        let mut rng = substream(config.seed, Stream::Synthetic, 1 + path as u64);
        let mut pos = [
            config.width * (0.25 + 0.5 * rng.random::<f64>()),
            config.height * (0.25 + 0.5 * rng.random::<f64>()),
        ];
        let mut heading = rng.random::<f64>() * std::f64::consts::TAU;
        for t in 0..config.steps {
            let rssi = aps
                .iter()
                .map(|ap| {
                    let d = ((pos[0] - ap[0]).powi(2) + (pos[1] - ap[1]).powi(2)).sqrt();
                    let noise: f64 = rng.sample::<f64, _>(StandardNormal) * config.noise_db;
                    let r = path_loss_rssi(d, noise);
                    if r < DETECTION_THRESHOLD {
                        UNDETECTED
                    } else {
                        r
                    }
                })
                .collect();
            records.push(FingerprintRecord {
                rssi,
                position: Some(pos),
                meta: Metadata {
                    path: Some(path as u32),
                    timestamp: Some(t as f64),
                    ..Metadata::default()
                },
            });
            heading += rng.sample::<f64, _>(StandardNormal) * config.turn_std;
            let mut next = [
                pos[0] + config.step_length * heading.cos(),
                pos[1] + config.step_length * heading.sin(),
            ];
            let mut dir = [heading.cos(), heading.sin()];
            for (a, limit) in [config.width, config.height].into_iter().enumerate() {
                if next[a] < 0.0 {
                    next[a] = -next[a];
                    dir[a] = -dir[a];
                } else if next[a] > limit {
                    next[a] = 2.0 * limit - next[a];
                    dir[a] = -dir[a];
                }
                next[a] = next[a].clamp(0.0, limit);
            }
            heading = dir[1].atan2(dir[0]);
            pos = next;
        }
    }
    Dataset::new(records, config.aps, Provenance::Synthetic)
}
