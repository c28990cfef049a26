use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Indices of a labeled subset and the unlabeled pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSplit {
    pub labeled: Vec<usize>,
    /// Every index, labels hidden; matches training the generative model on
    /// all inputs.
    pub unlabeled: Vec<usize>,
}

fn count_for(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1]")));
    }
    let k = (n as f64 * fraction).round() as usize;
    if k == 0 {
        return Err(Error::Data(format!("fraction {fraction} of {n} rows selects nothing")));
    }
    Ok(k.min(n))
}

/// Uniform selection without replacement of `round(fraction * n)` of the
/// indices `0..n`, sorted.
pub fn split_labeled(n: usize, fraction: f64, seed: u64) -> Result<LabeledSplit> {
    let k = count_for(n, fraction)?;
    let mut rng = stream(seed, Stream::DataSplit);
    let mut labeled = index::sample(&mut rng, n, k).into_vec();
    labeled.sort_unstable();
    Ok(LabeledSplit {
        labeled,
        unlabeled: (0..n).collect(),
    })
}

/// Random train/test partition of `0..n`; both parts sorted.
pub fn train_test_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = count_for(n, test_fraction)?;
    if k >= n {
        return Err(Error::Data("test split leaves no training rows".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::rng::substream(seed, Stream::DataSplit, 1));
    let mut test = order[..k].to_vec();
    let mut train = order[k..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}
