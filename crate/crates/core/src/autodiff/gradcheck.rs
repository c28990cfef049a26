//! Central finite-difference checks of the analytic gradients.

use super::{Graph, NodeId, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const ABS_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub elements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
    pub step: f64,
    /// Elements where the left and right one-sided differences disagree,
    /// i.e. the check point sits on a ReLU kink or a max-pool tie. They are
    /// excluded from the error; callers should resample when this is nonzero.
    pub kink_hits: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.blocks {
            writeln!(
                f,
                "{:<32} max rel err {:.3e} (element {} of {})",
                b.name, b.max_rel_error, b.worst_index, b.elements
            )?;
        }
        write!(
            f,
            "overall {:.3e} vs tolerance {:.1e}, {} kink hits: {}",
            self.max_rel_error(),
            self.tolerance,
            self.kink_hits,
            if self.passed() { "pass" } else { "FAIL" }
        )
    }
}

/// Compares backpropagated gradients of the scalar `loss` against central
/// differences with step `step`, perturbing every element of every bound
/// parameter in turn by replaying the recorded graph.
///
/// The relative error of one element is `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn gradient_check(graph: &mut Graph, loss: NodeId, step: f64, tolerance: f64) -> Result<GradCheckReport> {
    let analytic = graph.backward(loss)?;
    let params: Vec<(String, NodeId)> = graph.params().map(|(n, id)| (n.to_string(), id)).collect();
    let base = graph.forward(&[], loss)?.item();
    let mut blocks = Vec::with_capacity(params.len());
    let mut kink_hits = 0;

    for (name, id) in params {
        let original = graph.value(id).clone();
        let grad = analytic.node(id).expect("bound parameter has a gradient").clone();
        let mut worst = (0.0f64, 0usize);
        for i in 0..original.len() {
            let mut probe = original.clone();
            probe.data_mut()[i] = original.data()[i] + step;
            let plus = graph.forward(&[(id, probe.clone())], loss)?.item();
            probe.data_mut()[i] = original.data()[i] - step;
            let minus = graph.forward(&[(id, probe)], loss)?.item();

            let left = (base - minus) / step;
            let right = (plus - base) / step;
            if (right - left).abs() > 1e-3 + 0.05 * left.abs().max(right.abs()) {
                kink_hits += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(ABS_FLOOR);
            if rel > worst.0 {
                worst = (rel, i);
            }
        }
        graph.forward(&[(id, original.clone())], loss)?;
        blocks.push(BlockError {
            name,
            max_rel_error: worst.0,
            worst_index: worst.1,
            elements: original.len(),
        });
    }
    Ok(GradCheckReport {
        blocks,
        tolerance,
        step,
        kink_hits,
    })
}
