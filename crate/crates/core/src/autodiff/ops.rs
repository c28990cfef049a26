use super::graph::{Node, NodeId};
use super::{AdError, Result, LOG_FLOOR};
use crate::tensor::{gemm, gemm_strided, Tensor};

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Exp,
    /// Guarded: `ln(max(x, 1e-12))`.
    Log,
    Square,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Relu => x.max(0.0),
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Unary::Exp => x.exp(),
            Unary::Log => x.max(LOG_FLOOR).ln(),
            Unary::Square => x * x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Unary::Exp => y,
            Unary::Log => {
                if x > LOG_FLOOR {
                    1.0 / x
                } else {
                    0.0
                }
            }
            Unary::Square => 2.0 * x,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::Square => "square",
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    BroadcastCols {
        a: NodeId,
        cols: usize,
    },
    Affine {
        a: NodeId,
        scale: f64,
        shift: f64,
    },
    Unary {
        a: NodeId,
        f: Unary,
    },
    ClampMin {
        a: NodeId,
        floor: f64,
    },
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    LogSumExp(NodeId),
    LogSoftmax(NodeId),
    SliceCols {
        a: NodeId,
        start: usize,
        len: usize,
    },
    SliceRows {
        a: NodeId,
        start: usize,
        len: usize,
    },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Reshape {
        a: NodeId,
        shape: Vec<usize>,
    },
    Conv1d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
    },
    MaxPool1d {
        x: NodeId,
        width: usize,
        stride: usize,
    },
    Mask {
        a: NodeId,
        mask: Vec<f64>,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddRow(..) => "add_row",
            Op::BroadcastCols { .. } => "broadcast_cols",
            Op::Affine { .. } => "affine",
            Op::Unary { f, .. } => f.name(),
            Op::ClampMin { .. } => "clamp_min",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::RowSum(_) => "row_sum",
            Op::LogSumExp(_) => "logsumexp",
            Op::LogSoftmax(_) => "log_softmax",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Reshape { .. } => "reshape",
            Op::Conv1d { .. } => "conv1d",
            Op::MaxPool1d { .. } => "maxpool1d",
            Op::Mask { .. } => "dropout",
        }
    }

    pub(crate) fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Linear { x, w, b } | Op::Conv1d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BroadcastCols { a, .. }
            | Op::Affine { a, .. }
            | Op::Unary { a, .. }
            | Op::ClampMin { a, .. }
            | Op::SliceCols { a, .. }
            | Op::SliceRows { a, .. }
            | Op::Reshape { a, .. }
            | Op::Mask { a, .. } => vec![*a],
            Op::MaxPool1d { x, .. } => vec![*x],
            Op::Sum(a) | Op::Mean(a) | Op::RowSum(a) | Op::LogSumExp(a) | Op::LogSoftmax(a) => {
                vec![*a]
            }
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

fn mismatch(node: usize, op: &Op, detail: String) -> AdError {
    AdError::ShapeMismatch {
        node,
        op: op.name(),
        detail,
    }
}

fn val(nodes: &[Node], id: NodeId) -> &Tensor {
    &nodes[id.0].value
}

fn matrix(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Evaluates `op` given the already-evaluated operand nodes.
pub(crate) fn eval(op: &Op, nodes: &[Node], index: usize) -> Result<(Tensor, Vec<usize>)> {
    let err = |detail: String| mismatch(index, op, detail);
    let out = match op {
        Op::Leaf => unreachable!("leaves are never evaluated"),
        Op::MatMul(a, b) => {
            let (a, b) = (val(nodes, *a), val(nodes, *b));
            let ((m, k), (k2, n)) = match (matrix(a), matrix(b)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err(err(format!("{:?} x {:?}", a.shape(), b.shape()))),
            };
            if k != k2 {
                return Err(err(format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let mut c = vec![0.0; m * n];
            gemm(m, k, n, 1.0, a.data(), false, b.data(), false, 0.0, &mut c);
            Tensor::from_vec(&[m, n], c)
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(nodes, *x), val(nodes, *w));
            let (Some((n, inp)), Some((out, inp2))) = (matrix(xv), matrix(wv)) else {
                return Err(err(format!("x {:?}, w {:?}", xv.shape(), wv.shape())));
            };
            if inp != inp2 {
                return Err(err(format!("x {:?}, w {:?}", xv.shape(), wv.shape())));
            }
            let mut c = vec![0.0; n * out];
            if let Some(b) = b {
                let bv = val(nodes, *b);
                if bv.shape() != [out] {
                    return Err(err(format!("bias {:?}, expected [{out}]", bv.shape())));
                }
                for row in c.chunks_mut(out) {
                    row.copy_from_slice(bv.data());
                }
            }
            let beta = if b.is_some() { 1.0 } else { 0.0 };
            gemm(n, inp, out, 1.0, xv.data(), false, wv.data(), true, beta, &mut c);
            Tensor::from_vec(&[n, out], c)
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            if av.shape() != bv.shape() {
                return Err(err(format!("{:?} vs {:?}", av.shape(), bv.shape())));
            }
            match op {
                Op::Add(..) => zip_with(av, bv, |x, y| x + y),
                Op::Sub(..) => zip_with(av, bv, |x, y| x - y),
                Op::Mul(..) => zip_with(av, bv, |x, y| x * y),
                _ => zip_with(av, bv, |x, y| x / y),
            }
        }
        Op::AddRow(a, r) => {
            let (av, rv) = (val(nodes, *a), val(nodes, *r));
            let (_, cols) = av.as_matrix_dims();
            if rv.len() != cols {
                return Err(err(format!("{:?} + row {:?}", av.shape(), rv.shape())));
            }
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(cols) {
                row.iter_mut().zip(rv.data()).for_each(|(x, y)| *x += y);
            }
            Tensor::from_vec(av.shape(), data)
        }
        Op::BroadcastCols { a, cols } => {
            let av = val(nodes, *a);
            let Some((n, 1)) = matrix(av) else {
                return Err(err(format!("expected [n, 1], got {:?}", av.shape())));
            };
            let data = av.data().iter().flat_map(|&v| std::iter::repeat_n(v, *cols)).collect();
            Tensor::from_vec(&[n, *cols], data)
        }
        Op::Affine { a, scale, shift } => val(nodes, *a).map(|x| scale * x + shift),
        Op::Unary { a, f } => val(nodes, *a).map(|x| f.apply(x)),
        Op::ClampMin { a, floor } => val(nodes, *a).map(|x| x.max(*floor)),
        Op::Sum(a) => Tensor::scalar(val(nodes, *a).sum()),
        Op::Mean(a) => {
            let av = val(nodes, *a);
            Tensor::scalar(av.sum() / av.len() as f64)
        }
        Op::RowSum(a) => {
            let av = val(nodes, *a);
            let (rows, cols) = av.as_matrix_dims();
            let data = av.data().chunks(cols).map(|r| r.iter().sum()).collect();
            Tensor::from_vec(&keep_last(av.shape(), rows), data)
        }
        Op::LogSumExp(a) => {
            let av = val(nodes, *a);
            let (rows, cols) = av.as_matrix_dims();
            let data = av.data().chunks(cols).map(logsumexp).collect();
            Tensor::from_vec(&keep_last(av.shape(), rows), data)
        }
        Op::LogSoftmax(a) => {
            let av = val(nodes, *a);
            let (_, cols) = av.as_matrix_dims();
            let mut data = av.data().to_vec();
            for row in data.chunks_mut(cols) {
                let lse = logsumexp(row);
                row.iter_mut().for_each(|v| *v -= lse);
            }
            Tensor::from_vec(av.shape(), data)
        }
        Op::SliceCols { a, start, len } => {
            let av = val(nodes, *a);
            let (_, cols) = av.as_matrix_dims();
            if *len == 0 || start + len > cols {
                return Err(err(format!("cols {start}..{} of {:?}", start + len, av.shape())));
            }
            let data = av
                .data()
                .chunks(cols)
                .flat_map(|r| r[*start..start + len].iter().copied())
                .collect();
            let mut shape = av.shape().to_vec();
            *shape.last_mut().unwrap() = *len;
            Tensor::from_vec(&shape, data)
        }
        Op::SliceRows { a, start, len } => {
            let av = val(nodes, *a);
            let rows = av.shape()[0];
            if *len == 0 || start + len > rows {
                return Err(err(format!("rows {start}..{} of {:?}", start + len, av.shape())));
            }
            let stride = av.len() / rows;
            let data = av.data()[start * stride..(start + len) * stride].to_vec();
            let mut shape = av.shape().to_vec();
            shape[0] = *len;
            Tensor::from_vec(&shape, data)
        }
        Op::ConcatCols(parts) => {
            let first = val(nodes, parts[0]);
            let Some((rows, _)) = matrix(first) else {
                return Err(err(format!("expected matrices, got {:?}", first.shape())));
            };
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                match matrix(val(nodes, *p)) {
                    Some((r, c)) if r == rows => widths.push(c),
                    _ => return Err(err(format!("part {:?} vs {rows} rows", val(nodes, *p).shape()))),
                }
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(val(nodes, *p).row(r));
                }
            }
            Tensor::from_vec(&[rows, total], data)
        }
        Op::ConcatRows(parts) => {
            let first = val(nodes, parts[0]);
            let tail = &first.shape()[1..];
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let pv = val(nodes, *p);
                if &pv.shape()[1..] != tail {
                    return Err(err(format!("{:?} vs {:?}", pv.shape(), first.shape())));
                }
                rows += pv.shape()[0];
                data.extend_from_slice(pv.data());
            }
            let mut shape = vec![rows];
            shape.extend_from_slice(tail);
            Tensor::from_vec(&shape, data)
        }
        Op::Reshape { a, shape } => {
            let av = val(nodes, *a);
            av.clone()
                .reshaped(shape)
                .ok_or_else(|| err(format!("{:?} -> {:?}", av.shape(), shape)))?
        }
        Op::Conv1d { x, w, b, stride } => {
            let (xv, wv) = (val(nodes, *x), val(nodes, *w));
            let (n, len, cin, count, kernel) =
                conv_dims(xv, wv).ok_or_else(|| err(format!("x {:?}, filters {:?}", xv.shape(), wv.shape())))?;
            if kernel > len {
                return Err(err(format!("kernel {kernel} wider than input {len}")));
            }
            if *stride == 0 {
                return Err(err("stride must be >= 1".into()));
            }
            let out_len = (len - kernel) / stride + 1;
            let patch = kernel * cin;
            let mut out = vec![0.0; n * out_len * count];
            if let Some(b) = b {
                let bv = val(nodes, *b);
                if bv.shape() != [count] {
                    return Err(err(format!("bias {:?}, expected [{count}]", bv.shape())));
                }
                for row in out.chunks_mut(count) {
                    row.copy_from_slice(bv.data());
                }
            }
            let beta = if b.is_some() { 1.0 } else { 0.0 };
            for s in 0..n {
                let xs = &xv.data()[s * len * cin..(s + 1) * len * cin];
                let ys = &mut out[s * out_len * count..(s + 1) * out_len * count];
                gemm_strided(
                    out_len,
                    patch,
                    count,
                    xs,
                    (stride * cin, 1),
                    wv.data(),
                    (1, patch),
                    beta,
                    ys,
                );
            }
            Tensor::from_vec(&[n, out_len, count], out)
        }
        Op::MaxPool1d { x, width, stride } => {
            let xv = val(nodes, *x);
            let [n, len, c] = *xv.shape() else {
                return Err(err(format!("expected [n, length, channels], got {:?}", xv.shape())));
            };
            if *width > len || *width == 0 || *stride == 0 {
                return Err(err(format!("pool width {width} / stride {stride} on length {len}")));
            }
            let out_len = (len - width) / stride + 1;
            let mut out = Vec::with_capacity(n * out_len * c);
            let mut arg = Vec::with_capacity(n * out_len * c);
            let d = xv.data();
            for s in 0..n {
                for o in 0..out_len {
                    for ch in 0..c {
                        let mut best = s * len * c + o * stride * c + ch;
                        for k in 1..*width {
                            let i = s * len * c + (o * stride + k) * c + ch;
                            if d[i] > d[best] {
                                best = i;
                            }
                        }
                        out.push(d[best]);
                        arg.push(best);
                    }
                }
            }
            return Ok((Tensor::from_vec(&[n, out_len, c], out), arg));
        }
        Op::Mask { a, mask } => {
            let av = val(nodes, *a);
            if av.len() != mask.len() {
                return Err(err(format!("mask of {} for {:?}", mask.len(), av.shape())));
            }
            let data = av.data().iter().zip(mask).map(|(x, m)| x * m).collect();
            Tensor::from_vec(av.shape(), data)
        }
    };
    Ok((out, Vec::new()))
}

fn keep_last(shape: &[usize], rows: usize) -> Vec<usize> {
    if shape.len() == 1 {
        vec![1]
    } else {
        let mut s = shape.to_vec();
        *s.last_mut().unwrap() = 1;
        debug_assert_eq!(s.iter().product::<usize>(), rows);
        s
    }
}

pub(crate) fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn conv_dims(x: &Tensor, w: &Tensor) -> Option<(usize, usize, usize, usize, usize)> {
    match (x.shape(), w.shape()) {
        ([n, len, cin], [count, kernel, cin2]) if cin == cin2 => Some((*n, *len, *cin, *count, *kernel)),
        _ => None,
    }
}

/// Accumulates into the gradient slot of `id` if that node needs one.
fn acc(grads: &mut [Option<Tensor>], nodes: &[Node], id: NodeId, f: impl FnOnce(&mut [f64])) {
    if !nodes[id.0].requires_grad {
        return;
    }
    let slot = grads[id.0].get_or_insert_with(|| Tensor::zeros(nodes[id.0].value.shape()));
    f(slot.data_mut());
}

fn acc_scaled(grads: &mut [Option<Tensor>], nodes: &[Node], id: NodeId, g: &[f64], s: impl Fn(usize, f64) -> f64) {
    acc(grads, nodes, id, |d| {
        d.iter_mut().zip(g).enumerate().for_each(|(i, (d, &g))| *d += s(i, g));
    });
}

/// Pushes `upstream` (the gradient of the node's value) into its operands.
pub(crate) fn backprop(op: &Op, node: &Node, upstream: &Tensor, nodes: &[Node], grads: &mut [Option<Tensor>]) {
    let g = upstream.data();
    let y = node.value.data();
    match op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(nodes, *a), val(nodes, *b));
            let (m, k) = matrix(av).unwrap();
            let n = bv.shape()[1];
            acc(grads, nodes, *a, |d| {
                gemm(m, n, k, 1.0, g, false, bv.data(), true, 1.0, d)
            });
            acc(grads, nodes, *b, |d| {
                gemm(k, m, n, 1.0, av.data(), true, g, false, 1.0, d)
            });
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(nodes, *x), val(nodes, *w));
            let (n, inp) = matrix(xv).unwrap();
            let out = wv.shape()[0];
            acc(grads, nodes, *x, |d| {
                gemm(n, out, inp, 1.0, g, false, wv.data(), false, 1.0, d)
            });
            acc(grads, nodes, *w, |d| {
                gemm(out, n, inp, 1.0, g, true, xv.data(), false, 1.0, d)
            });
            if let Some(b) = b {
                acc(grads, nodes, *b, |d| {
                    for row in g.chunks(out) {
                        d.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
            }
        }
        Op::Add(a, b) => {
            acc_scaled(grads, nodes, *a, g, |_, g| g);
            acc_scaled(grads, nodes, *b, g, |_, g| g);
        }
        Op::Sub(a, b) => {
            acc_scaled(grads, nodes, *a, g, |_, g| g);
            acc_scaled(grads, nodes, *b, g, |_, g| -g);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(nodes, *a).data(), val(nodes, *b).data());
            acc_scaled(grads, nodes, *a, g, |i, g| g * bv[i]);
            acc_scaled(grads, nodes, *b, g, |i, g| g * av[i]);
        }
        Op::Div(a, b) => {
            let bv = val(nodes, *b).data();
            acc_scaled(grads, nodes, *a, g, |i, g| g / bv[i]);
            acc_scaled(grads, nodes, *b, g, |i, g| -g * y[i] / bv[i]);
        }
        Op::AddRow(a, r) => {
            acc_scaled(grads, nodes, *a, g, |_, g| g);
            let cols = val(nodes, *r).len();
            acc(grads, nodes, *r, |d| {
                for row in g.chunks(cols) {
                    d.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                }
            });
        }
        Op::BroadcastCols { a, cols } => {
            acc(grads, nodes, *a, |d| {
                for (d, row) in d.iter_mut().zip(g.chunks(*cols)) {
                    *d += row.iter().sum::<f64>();
                }
            });
        }
        Op::Affine { a, scale, .. } => acc_scaled(grads, nodes, *a, g, |_, g| g * scale),
        Op::Unary { a, f } => {
            let x = val(nodes, *a).data();
            acc_scaled(grads, nodes, *a, g, |i, g| g * f.derivative(x[i], y[i]));
        }
        Op::ClampMin { a, floor } => {
            let x = val(nodes, *a).data();
            acc_scaled(grads, nodes, *a, g, |i, g| if x[i] >= *floor { g } else { 0.0 });
        }
        Op::Sum(a) => acc(grads, nodes, *a, |d| d.iter_mut().for_each(|d| *d += g[0])),
        Op::Mean(a) => {
            let n = val(nodes, *a).len() as f64;
            acc(grads, nodes, *a, |d| d.iter_mut().for_each(|d| *d += g[0] / n));
        }
        Op::RowSum(a) => {
            let (_, cols) = val(nodes, *a).as_matrix_dims();
            acc(grads, nodes, *a, |d| {
                for (row, &gr) in d.chunks_mut(cols).zip(g) {
                    row.iter_mut().for_each(|d| *d += gr);
                }
            });
        }
        Op::LogSumExp(a) => {
            let x = val(nodes, *a).data();
            let (_, cols) = val(nodes, *a).as_matrix_dims();
            acc(grads, nodes, *a, |d| {
                for (r, row) in d.chunks_mut(cols).enumerate() {
                    let xr = &x[r * cols..(r + 1) * cols];
                    for (dv, xv) in row.iter_mut().zip(xr) {
                        *dv += g[r] * (xv - y[r]).exp();
                    }
                }
            });
        }
        Op::LogSoftmax(a) => {
            let (_, cols) = val(nodes, *a).as_matrix_dims();
            acc(grads, nodes, *a, |d| {
                for (r, row) in d.chunks_mut(cols).enumerate() {
                    let gr = &g[r * cols..(r + 1) * cols];
                    let yr = &y[r * cols..(r + 1) * cols];
                    let total: f64 = gr.iter().sum();
                    for j in 0..cols {
                        row[j] += gr[j] - yr[j].exp() * total;
                    }
                }
            });
        }
        Op::SliceCols { a, start, len } => {
            let (_, cols) = val(nodes, *a).as_matrix_dims();
            acc(grads, nodes, *a, |d| {
                for (row, gr) in d.chunks_mut(cols).zip(g.chunks(*len)) {
                    row[*start..start + len].iter_mut().zip(gr).for_each(|(d, v)| *d += v);
                }
            });
        }
        Op::SliceRows { a, start, .. } => {
            let av = val(nodes, *a);
            let stride = av.len() / av.shape()[0];
            acc(grads, nodes, *a, |d| {
                d[start * stride..start * stride + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, v)| *d += v);
            });
        }
        Op::ConcatCols(parts) => {
            let total = node.value.shape()[1];
            let mut offset = 0;
            for p in parts {
                let width = val(nodes, *p).shape()[1];
                acc(grads, nodes, *p, |d| {
                    for (row, gr) in d.chunks_mut(width).zip(g.chunks(total)) {
                        row.iter_mut()
                            .zip(&gr[offset..offset + width])
                            .for_each(|(d, v)| *d += v);
                    }
                });
                offset += width;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = val(nodes, *p).len();
                acc(grads, nodes, *p, |d| {
                    d.iter_mut().zip(&g[offset..offset + len]).for_each(|(d, v)| *d += v);
                });
                offset += len;
            }
        }
        Op::Reshape { a, .. } => acc_scaled(grads, nodes, *a, g, |_, g| g),
        Op::Conv1d { x, w, b, stride } => {
            let (xv, wv) = (val(nodes, *x), val(nodes, *w));
            let (n, len, cin, count, kernel) = conv_dims(xv, wv).unwrap();
            let out_len = node.value.shape()[1];
            let patch = kernel * cin;
            acc(grads, nodes, *w, |d| {
                for s in 0..n {
                    let gs = &g[s * out_len * count..(s + 1) * out_len * count];
                    let xs = &xv.data()[s * len * cin..(s + 1) * len * cin];
                    // dW [count, patch] += G^T [count, out] * P [out, patch]
                    gemm_strided(count, out_len, patch, gs, (1, count), xs, (stride * cin, 1), 1.0, d);
                }
            });
            acc(grads, nodes, *x, |d| {
                let mut dp = vec![0.0; out_len * patch];
                for s in 0..n {
                    let gs = &g[s * out_len * count..(s + 1) * out_len * count];
                    gemm(out_len, count, patch, 1.0, gs, false, wv.data(), false, 0.0, &mut dp);
                    let ds = &mut d[s * len * cin..(s + 1) * len * cin];
                    for o in 0..out_len {
                        let base = o * stride * cin;
                        ds[base..base + patch]
                            .iter_mut()
                            .zip(&dp[o * patch..(o + 1) * patch])
                            .for_each(|(d, v)| *d += v);
                    }
                }
            });
            if let Some(b) = b {
                acc(grads, nodes, *b, |d| {
                    for row in g.chunks(count) {
                        d.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                });
            }
        }
        Op::MaxPool1d { x, .. } => {
            acc(grads, nodes, *x, |d| {
                for (&i, &gv) in node.aux.iter().zip(g) {
                    d[i] += gv;
                }
            });
        }
        Op::Mask { a, mask } => acc_scaled(grads, nodes, *a, g, |i, g| g * mask[i]),
    }
}
