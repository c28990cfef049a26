//! Mixture of diagonal 2-D Gaussians as a network output head.
//!
//! A head with `K` components reads `5K` raw outputs laid out as
//! `[π-logits (K) | μx (K) | μy (K) | σx-logits (K) | σy-logits (K)]`.
//! Weights are the softmax of the π-logits, means are used as-is and
//! deviations are `max(exp(logit), 1e-3)`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Graph, NodeId, LOG_FLOOR};
use crate::error::{Error, Result};

/// Lower bound on every component deviation.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Largest achievable density times the weight sum, `1 / (2π σ_floor²)`.
/// Its negative log is the lowest NLL any mixture can reach.
pub fn nll_lower_bound() -> f64 {
    -(1.0 / (2.0 * PI * SIGMA_FLOOR * SIGMA_FLOOR)).ln()
}

/// Raw output width for `k` components.
pub fn raw_width(k: usize) -> usize {
    5 * k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub sigmas: Vec<[f64; 2]>,
}

impl MixtureParams {
    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Checks the simplex constraint on the weights and the deviation floor.
    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.sigmas.len() != k {
            return Err(Error::Data("mixture component counts disagree".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::Data(format!("mixture weights sum to {total}")));
        }
        let bad_sigma = self.sigmas.iter().flatten().any(|s| !s.is_finite() || *s < SIGMA_FLOOR);
        if bad_sigma || self.means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(Error::Data("mixture deviations below floor or non-finite".into()));
        }
        Ok(())
    }

    /// Maps every component through `y -> offset + scale * y` per coordinate.
    pub fn affine(&self, offset: [f64; 2], scale: [f64; 2]) -> Self {
        Self {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| [offset[0] + scale[0] * m[0], offset[1] + scale[1] * m[1]])
                .collect(),
            sigmas: self
                .sigmas
                .iter()
                .map(|s| [scale[0].abs() * s[0], scale[1].abs() * s[1]])
                .collect(),
        }
    }
}

/// Decodes one row of raw head outputs.
pub fn params_from_logits(raw: &[f64]) -> Result<MixtureParams> {
    if raw.is_empty() || !raw.len().is_multiple_of(5) {
        return Err(Error::Data(format!(
            "mixture head width {} is not a positive multiple of 5",
            raw.len()
        )));
    }
    let k = raw.len() / 5;
    let logits = &raw[..k];
    let lse = autodiff_logsumexp(logits);
    let weights = logits.iter().map(|l| (l - lse).exp()).collect();
    let means = (0..k).map(|i| [raw[k + i], raw[2 * k + i]]).collect();
    let sigma = |l: f64| l.exp().max(SIGMA_FLOOR);
    let sigmas = (0..k).map(|i| [sigma(raw[3 * k + i]), sigma(raw[4 * k + i])]).collect();
    Ok(MixtureParams { weights, means, sigmas })
}

fn autodiff_logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `-log Σ_k π_k N(target; μ_k, diag σ_k²)`, evaluated with log-sum-exp.
pub fn nll(params: &MixtureParams, target: [f64; 2]) -> f64 {
    let terms: Vec<f64> = (0..params.components())
        .map(|k| {
            let [mx, my] = params.means[k];
            let [sx, sy] = params.sigmas[k];
            let dx = (target[0] - mx) / sx;
            let dy = (target[1] - my) / sy;
            params.weights[k].max(LOG_FLOOR).ln() - (2.0 * PI).ln() - sx.ln() - sy.ln() - 0.5 * (dx * dx + dy * dy)
        })
        .collect();
    -autodiff_logsumexp(&terms)
}

/// Ancestral sampling: a component from the weights, then a point from it.
pub fn sample(params: &MixtureParams, rng: &mut impl Rng) -> [f64; 2] {
    let k = sample_component(params, rng);
    let [mx, my] = params.means[k];
    let [sx, sy] = params.sigmas[k];
    let ex: f64 = rng.sample(StandardNormal);
    let ey: f64 = rng.sample(StandardNormal);
    [mx + sx * ex, my + sy * ey]
}

pub fn sample_component(params: &MixtureParams, rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in params.weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // rounding left u above the running sum: take the last component with weight
    params.weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Weighted mean of the component means.
pub fn mixture_mean(params: &MixtureParams) -> [f64; 2] {
    params
        .weights
        .iter()
        .zip(&params.means)
        .fold([0.0, 0.0], |acc, (w, m)| [acc[0] + w * m[0], acc[1] + w * m[1]])
}

/// Per-sample NLL `[n, 1]` of raw head outputs `[n, 5K]` against `[n, 2]` targets.
pub fn nll_per_sample(g: &mut Graph, raw: NodeId, target: NodeId) -> autodiff::Result<NodeId> {
    let width = g.shape(raw)[1];
    let k = width / 5;
    let logits = g.slice_cols(raw, 0, k)?;
    let log_pi = g.log_softmax_rows(logits)?;
    let mut log_density = g.affine(log_pi, 1.0, -(2.0 * PI).ln())?;
    for axis in 0..2 {
        let mu = g.slice_cols(raw, (1 + axis) * k, k)?;
        let s_logit = g.slice_cols(raw, (3 + axis) * k, k)?;
        let s = g.exp(s_logit)?;
        let sigma = g.clamp_min(s, SIGMA_FLOOR)?;
        let y = g.slice_cols(target, axis, 1)?;
        let y = g.broadcast_cols(y, k)?;
        let diff = g.sub(y, mu)?;
        let z = g.div(diff, sigma)?;
        let z2 = g.square(z)?;
        let half = g.affine(z2, -0.5, 0.0)?;
        let log_sigma = g.log(sigma)?;
        log_density = g.add(log_density, half)?;
        log_density = g.sub(log_density, log_sigma)?;
    }
    let lse = g.logsumexp_rows(log_density)?;
    g.affine(lse, -1.0, 0.0)
}

/// Mean NLL over the batch.
pub fn nll_loss(g: &mut Graph, raw: NodeId, target: NodeId) -> autodiff::Result<NodeId> {
    let per = nll_per_sample(g, raw, target)?;
    g.mean(per)
}
