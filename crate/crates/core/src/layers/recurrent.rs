//! Recurrent cells.
//!
//! Gate equations, with `W` acting on the input `x`, `U` on the previous
//! hidden state `h` and `σ` the logistic function:
//!
//! * vanilla: `h' = act(W x + U h + b)` (`act` is the sigmoid by default)
//! * LSTM, gates stacked as `[i, f, g, o]`:
//!   `i = σ(.)`, `f = σ(.)`, `g = tanh(.)`, `o = σ(.)` of `W x + U h + b`;
//!   `c' = f ⊙ c + i ⊙ g`, `h' = o ⊙ tanh(c')`
//! * GRU, gates stacked as `[r, z, n]`, with separate input and recurrent
//!   biases `b` and `b_u`:
//!   `r = σ(W_r x + b_r + U_r h + b_ur)`, `z = σ(W_z x + b_z + U_z h + b_uz)`,
//!   `n = tanh(W_n x + b_n + r ⊙ (U_n h + b_un))`, `h' = (1 - z) ⊙ n + z ⊙ h`

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_limit, Activation};
use crate::autodiff::{self, Graph, NodeId};
use crate::params::{Bind, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Vanilla,
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Vanilla => 1,
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }
}

/// Hidden (and, for LSTM, cell) state of one layer as graph nodes `[n, hidden]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RnnState {
    pub h: NodeId,
    pub c: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCell {
    pub prefix: String,
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    /// Output nonlinearity of the vanilla cell.
    pub activation: Activation,
}

impl RecurrentCell {
    pub fn new(prefix: &str, kind: CellKind, input: usize, hidden: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            kind,
            input,
            hidden,
            activation: Activation::Sigmoid,
        }
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn param_count(&self) -> usize {
        let g = self.kind.gates() * self.hidden;
        let extra = if self.kind == CellKind::Gru { g } else { 0 };
        g * self.input + g * self.hidden + g + extra
    }

    /// Input weights use the Glorot limit per gate; recurrent weights are
    /// uniform in `±1/sqrt(hidden)`; biases start at zero.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let g = self.kind.gates() * self.hidden;
        let wl = glorot_limit(self.input, self.hidden);
        store.init_uniform(&self.name("w"), &[g, self.input], wl, rng);
        let ul = 1.0 / (self.hidden as f64).sqrt();
        store.init_uniform(&self.name("u"), &[g, self.hidden], ul, rng);
        store.init_zeros(&self.name("b"), &[g]);
        if self.kind == CellKind::Gru {
            store.init_zeros(&self.name("bu"), &[g]);
        }
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> RnnState {
        let h = g.input(Tensor::zeros(&[batch, self.hidden]));
        let c = (self.kind == CellKind::Lstm).then(|| g.input(Tensor::zeros(&[batch, self.hidden])));
        RnnState { h, c }
    }

    /// Advances the state by one timestep with input `x [n, input]`.
    pub fn step(&self, g: &mut Graph, bind: Bind, x: NodeId, state: RnnState) -> autodiff::Result<RnnState> {
        let hd = self.hidden;
        let w = bind.node(g, &self.name("w"));
        let u = bind.node(g, &self.name("u"));
        let b = bind.node(g, &self.name("b"));
        match self.kind {
            CellKind::Vanilla => {
                let wx = g.linear(x, w, Some(b))?;
                let uh = g.linear(state.h, u, None)?;
                let z = g.add(wx, uh)?;
                let h = self.activation.apply(g, z)?;
                Ok(RnnState { h, c: None })
            }
            CellKind::Lstm => {
                let wx = g.linear(x, w, Some(b))?;
                let uh = g.linear(state.h, u, None)?;
                let z = g.add(wx, uh)?;
                let i = g.slice_cols(z, 0, hd)?;
                let i = g.sigmoid(i)?;
                let f = g.slice_cols(z, hd, hd)?;
                let f = g.sigmoid(f)?;
                let cand = g.slice_cols(z, 2 * hd, hd)?;
                let cand = g.tanh(cand)?;
                let o = g.slice_cols(z, 3 * hd, hd)?;
                let o = g.sigmoid(o)?;
                let c_prev = state.c.expect("LSTM state carries a cell vector");
                let keep = g.mul(f, c_prev)?;
                let write = g.mul(i, cand)?;
                let c = g.add(keep, write)?;
                let tc = g.tanh(c)?;
                let h = g.mul(o, tc)?;
                Ok(RnnState { h, c: Some(c) })
            }
            CellKind::Gru => {
                let bu = bind.node(g, &self.name("bu"));
                let a = g.linear(x, w, Some(b))?;
                let r_in = g.linear(state.h, u, Some(bu))?;
                let ar = g.slice_cols(a, 0, 2 * hd)?;
                let ur = g.slice_cols(r_in, 0, 2 * hd)?;
                let gates = g.add(ar, ur)?;
                let gates = g.sigmoid(gates)?;
                let r = g.slice_cols(gates, 0, hd)?;
                let z = g.slice_cols(gates, hd, hd)?;
                let an = g.slice_cols(a, 2 * hd, hd)?;
                let un = g.slice_cols(r_in, 2 * hd, hd)?;
                let run = g.mul(r, un)?;
                let pre = g.add(an, run)?;
                let n = g.tanh(pre)?;
                let d = g.sub(state.h, n)?;
                let zd = g.mul(z, d)?;
                let h = g.add(n, zd)?;
                Ok(RnnState { h, c: None })
            }
        }
    }
}
