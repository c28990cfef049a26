//! Reverse-mode automatic differentiation over a define-by-run graph.
//!
//! A [`Graph`] is rebuilt for every training step. Each operation is
//! evaluated eagerly when it is recorded, so model code reads like ordinary
//! forward code; the recorded tape can then be differentiated with
//! [`Graph::backward`] or re-evaluated with new leaf values through
//! [`Graph::forward`] (which is what the finite-difference checker uses).
//!
//! All arithmetic is `f64`. Every op output is checked for non-finite values
//! and the offending op is reported by name.

mod gradcheck;
mod graph;
mod ops;

pub use gradcheck::{gradient_check, BlockError, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use ops::Unary;

use thiserror::Error;

/// Smallest argument passed to `ln`; `log(x)` is computed as `ln(max(x, LOG_FLOOR))`.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("non-finite value produced at node {node} by {op}")]
    NonFinite { node: usize, op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("node {0} has not been evaluated in this graph")]
    UnknownNode(usize),
    #[error("node {0} is not a leaf and cannot be fed")]
    NotALeaf(usize),
}

pub type Result<T> = std::result::Result<T, AdError>;
