use std::collections::{BTreeMap, HashMap};

use super::ops::{self, Op, Unary};
use super::{AdError, Result};
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    /// Argmax routing for max-pool; empty for every other op.
    pub(crate) aux: Vec<usize>,
    pub(crate) requires_grad: bool,
}

/// A recorded computation. Operands always precede their results.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

/// Gradients of a scalar loss with respect to every parameter leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
    by_node: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn node(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(&id)
    }

    /// Parameter gradients in name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    /// Global L2 norm over all parameter gradients.
    pub fn norm(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|t| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.by_name.values_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    /// A trainable leaf named `name`. Binding the same name twice returns
    /// the first node.
    pub fn param(&mut self, name: &str, value: &Tensor) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push_leaf(value.clone(), true);
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn param_node(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    /// Names and nodes of all bound parameters.
    pub fn params(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.params.iter().map(|(k, &v)| (k.as_str(), v))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            aux: Vec::new(),
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, ids: &[NodeId]) -> Result<()> {
        match ids.iter().find(|id| id.0 >= self.nodes.len()) {
            Some(id) => Err(AdError::UnknownNode(id.0)),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let operands = op.operands();
        self.check(&operands)?;
        let index = self.nodes.len();
        let (value, aux) = ops::eval(&op, &self.nodes, index)?;
        if !value.is_finite() {
            return Err(AdError::NonFinite {
                node: index,
                op: op.name(),
            });
        }
        let requires_grad = operands.iter().any(|o| self.nodes[o.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            aux,
            requires_grad,
        });
        Ok(NodeId(index))
    }

    // ---- operations -------------------------------------------------------

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    /// Affine map of each row: `x [n, in]`, `w [out, in]`, `b [out]`, result
    /// `x * w^T + b` of shape `[n, out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        self.push(Op::Linear { x, w, b })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div(a, b))
    }

    /// Adds a `[m]` row vector to every row of `[.., m]`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.push(Op::AddRow(a, row))
    }

    /// Repeats a `[n, 1]` column `cols` times: `[n, cols]`.
    pub fn broadcast_cols(&mut self, a: NodeId, cols: usize) -> Result<NodeId> {
        self.push(Op::BroadcastCols { a, cols })
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.push(Op::Affine { a, scale, shift })
    }

    pub fn unary(&mut self, a: NodeId, f: Unary) -> Result<NodeId> {
        self.push(Op::Unary { a, f })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Relu)
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Exp)
    }

    /// Guarded natural log, `ln(max(a, 1e-12))`.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Log)
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(a, Unary::Square)
    }

    /// `max(a, floor)`; the gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        self.push(Op::ClampMin { a, floor })
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    /// Sum along the last axis, keeping it with extent 1.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::RowSum(a))
    }

    /// Max-shifted log-sum-exp along the last axis, keeping it with extent 1.
    pub fn logsumexp_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogSumExp(a))
    }

    /// Max-shifted log-softmax along the last axis.
    pub fn log_softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogSoftmax(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let ls = self.log_softmax_rows(a)?;
        self.exp(ls)
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SliceCols { a, start, len })
    }

    /// Rows `start..start + len` along the first axis.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SliceRows { a, start, len })
    }

    /// Column-wise concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    /// Concatenation along the first axis.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(Op::ConcatRows(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::Reshape {
            a,
            shape: shape.to_vec(),
        })
    }

    /// Valid cross-correlation. `x [n, length, c_in]`, `w [count, kernel, c_in]`,
    /// `b [count]`, result `[n, (length - kernel) / stride + 1, count]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>, stride: usize) -> Result<NodeId> {
        self.push(Op::Conv1d { x, w, b, stride })
    }

    /// Windowed maxima over axis 1 of `[n, length, c]`. Ties route the
    /// gradient to the earliest index of the window.
    pub fn maxpool1d(&mut self, x: NodeId, width: usize, stride: usize) -> Result<NodeId> {
        self.push(Op::MaxPool1d { x, width, stride })
    }

    /// Elementwise product with a fixed mask (already carrying the inverted
    /// dropout scale).
    pub fn masked(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        self.push(Op::Mask { a, mask })
    }

    // ---- evaluation -------------------------------------------------------

    /// Re-evaluates the whole recorded tape after replacing the values of
    /// the fed leaves, and returns the value of `output`.
    ///
    /// Dropout masks recorded when the graph was built are reused, so a
    /// replay is deterministic.
    pub fn forward(&mut self, feeds: &[(NodeId, Tensor)], output: NodeId) -> Result<&Tensor> {
        self.check(&[output])?;
        for (id, value) in feeds {
            self.check(&[*id])?;
            let node = &mut self.nodes[id.0];
            if !matches!(node.op, Op::Leaf) {
                return Err(AdError::NotALeaf(id.0));
            }
            if node.value.shape() != value.shape() {
                return Err(AdError::ShapeMismatch {
                    node: id.0,
                    op: "feed",
                    detail: format!("expected {:?}, got {:?}", node.value.shape(), value.shape()),
                });
            }
            node.value = value.clone();
        }
        for index in 0..=output.0 {
            if matches!(self.nodes[index].op, Op::Leaf) {
                continue;
            }
            let (value, aux) = ops::eval(&self.nodes[index].op, &self.nodes, index)?;
            if !value.is_finite() {
                return Err(AdError::NonFinite {
                    node: index,
                    op: self.nodes[index].op.name(),
                });
            }
            self.nodes[index].value = value;
            self.nodes[index].aux = aux;
        }
        Ok(&self.nodes[output.0].value)
    }

    /// Gradients of the scalar node `loss` with respect to every bound
    /// parameter. Parameters with no path to `loss` get exact zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        self.check(&[loss])?;
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(AdError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));
        for index in (0..=loss.0).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = grads[index].take() else {
                continue;
            };
            ops::backprop(&node.op, node, &upstream, &self.nodes, &mut grads);
        }

        let mut out = Gradients::default();
        for (name, &id) in &self.params {
            let g = match grads.get_mut(id.0).and_then(Option::take) {
                Some(g) => g,
                None => Tensor::zeros(self.nodes[id.0].value.shape()),
            };
            out.by_node.insert(id, g.clone());
            out.by_name.insert(name.clone(), g);
        }
        Ok(out)
    }
}
