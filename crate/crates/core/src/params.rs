//! Named parameter blocks.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, NodeId};
use crate::tensor::Tensor;

/// All trainable tensors of a model, keyed by dotted names such as
/// `cnn.conv.w`. Iteration order is the name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    blocks: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.blocks.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.blocks.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.blocks.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> &Tensor {
        self.blocks
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not initialized"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.blocks.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.blocks.values().map(Tensor::len).sum()
    }

    /// Scalars in blocks whose name starts with `prefix`.
    pub fn scalar_count_with_prefix(&self, prefix: &str) -> usize {
        self.blocks
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of the values.
    pub fn digest(&self) -> String {
        self.digest_with_prefix("")
    }

    pub fn digest_with_prefix(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.blocks.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Uniform initialization in `[-limit, limit]`.
    pub fn init_uniform(&mut self, name: &str, shape: &[usize], limit: f64, rng: &mut impl Rng) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
        self.insert(name, Tensor::from_vec(shape, data));
    }

    pub fn init_zeros(&mut self, name: &str, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }
}

/// How parameters enter a graph: as trainable leaves or as constants.
#[derive(Debug, Clone, Copy)]
pub struct Bind<'a> {
    store: &'a ParamStore,
    trainable: bool,
}

impl<'a> Bind<'a> {
    pub fn trainable(store: &'a ParamStore) -> Self {
        Self { store, trainable: true }
    }

    /// Parameters enter as constants and receive no gradient.
    pub fn frozen(store: &'a ParamStore) -> Self {
        Self {
            store,
            trainable: false,
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn node(&self, g: &mut Graph, name: &str) -> NodeId {
        let t = self.store.tensor(name);
        if self.trainable {
            g.param(name, t)
        } else {
            g.input(t.clone())
        }
    }
}
