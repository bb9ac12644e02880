//! Feed-forward and recurrent building blocks on top of [`Graph`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), input, output, input, rng);
        let b = store.add_uniform(format!("{name}.b"), 1, output, input, rng);
        Self {
            w,
            b: Some(b),
            input,
            output,
        }
    }

    pub fn without_bias(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let w = store.add_uniform(format!("{name}.w"), input, output, input, rng);
        Self {
            w,
            b: None,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let y = g.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => y,
        }
    }
}

/// One-hidden-layer tanh perceptron producing unnormalised scores.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, output: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, output, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.hidden.forward(g, store, x);
        let h = g.tanh(h);
        self.out.forward(g, store, h)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, vocab: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let table = store.add_uniform(format!("{name}.table"), vocab, dim, dim, rng);
        Self { table, vocab, dim }
    }

    pub fn lookup(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Var {
        let t = g.param(store, self.table);
        g.gather_rows(t, ids)
    }
}

/// Hidden and cell vectors of an LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl LstmState {
    pub fn zeros(h: usize) -> Self {
        Self {
            hidden: Tensor::row_vector(vec![0.0; h]),
            cell: Tensor::row_vector(vec![0.0; h]),
        }
    }
}

/// Plain LSTM weights: gates stacked `[input, forget, cell, output]` along columns.
#[derive(Debug, Clone)]
pub struct LstmWeights {
    /// in × 4H
    pub w_x: Tensor,
    /// H × 4H
    pub w_h: Tensor,
    /// 1 × 4H
    pub b: Tensor,
}

/// One LSTM step on plain tensors.
pub fn lstm_step(x: &Tensor, prev: &LstmState, params: &LstmWeights) -> Result<LstmState> {
    let h = prev.hidden.len();
    if prev.cell.len() != h {
        return Err(Error::Shape("hidden and cell widths differ".into()));
    }
    if x.len() != params.w_x.rows()
        || params.w_x.cols() != 4 * h
        || params.w_h.rows() != h
        || params.w_h.cols() != 4 * h
        || params.b.len() != 4 * h
    {
        return Err(Error::Shape(format!(
            "lstm_step: x {:?}, w_x {:?}, w_h {:?}, b {:?}, H={h}",
            x.shape(),
            params.w_x.shape(),
            params.w_h.shape(),
            params.b.shape()
        )));
    }
    let mut g = Graph::inference();
    let xv = g.constant(Tensor::row_vector(x.data().to_vec()));
    let hv = g.constant(Tensor::row_vector(prev.hidden.data().to_vec()));
    let cv = g.constant(Tensor::row_vector(prev.cell.data().to_vec()));
    let wx = g.constant(params.w_x.clone());
    let wh = g.constant(params.w_h.clone());
    let b = g.constant(Tensor::row_vector(params.b.data().to_vec()));
    let zx = g.matmul(xv, wx);
    let zh = g.matmul(hv, wh);
    let z = g.add(zx, zh);
    let z = g.add_row(z, b);
    let hc = g.lstm_cell(z, cv);
    let out = g.value(hc).data();
    let state = LstmState {
        hidden: Tensor::row_vector(out[..h].to_vec()),
        cell: Tensor::row_vector(out[h..].to_vec()),
    };
    state.hidden.ensure_finite("lstm_step")?;
    Ok(state)
}

/// Unidirectional LSTM layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Lstm {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_x: store.add_uniform(format!("{name}.w_x"), input, 4 * hidden, hidden, rng),
            w_h: store.add_uniform(format!("{name}.w_h"), hidden, 4 * hidden, hidden, rng),
            b: store.add_uniform(format!("{name}.b"), 1, 4 * hidden, hidden, rng),
            input,
            hidden,
        }
    }

    pub fn weights(&self, store: &ParamStore) -> LstmWeights {
        LstmWeights {
            w_x: store.value(self.w_x).clone(),
            w_h: store.value(self.w_h).clone(),
            b: store.value(self.b).clone(),
        }
    }

    pub fn zero_state(&self, g: &mut Graph) -> (Var, Var) {
        let h = g.constant(Tensor::zeros(&[1, self.hidden]));
        let c = g.constant(Tensor::zeros(&[1, self.hidden]));
        (h, c)
    }

    /// Single step on a `1×input` row; returns the new `(hidden, cell)`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, state: (Var, Var)) -> (Var, Var) {
        let wx = g.param(store, self.w_x);
        let zx = g.matmul(x, wx);
        let b = g.param(store, self.b);
        let zx = g.add_row(zx, b);
        self.step_projected(g, store, zx, state)
    }

    /// Step given the already projected input `x·W_x + b`.
    fn step_projected(&self, g: &mut Graph, store: &ParamStore, zx: Var, (h, c): (Var, Var)) -> (Var, Var) {
        let wh = g.param(store, self.w_h);
        let zh = g.matmul(h, wh);
        let z = g.add(zx, zh);
        let hc = g.lstm_cell(z, c);
        let h2 = g.slice_cols(hc, 0, self.hidden);
        let c2 = g.slice_cols(hc, self.hidden, self.hidden);
        (h2, c2)
    }

    /// Runs over a `T×input` sequence and returns `T×H` hidden states in input order.
    /// With `reverse` the recurrence runs from the last row to the first.
    pub fn run(&self, g: &mut Graph, store: &ParamStore, xs: Var, reverse: bool) -> Var {
        let init = self.zero_state(g);
        self.run_from(g, store, xs, reverse, init)
    }

    /// [`run`](Self::run) starting from a given `(hidden, cell)` state.
    pub fn run_from(&self, g: &mut Graph, store: &ParamStore, xs: Var, reverse: bool, init: (Var, Var)) -> Var {
        let t_len = g.shape(xs).0;
        let wx = g.param(store, self.w_x);
        let b = g.param(store, self.b);
        let proj = g.matmul(xs, wx);
        let proj = g.add_row(proj, b);
        let mut state = init;
        let mut outs = vec![None; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let zx = g.row(proj, t);
            state = self.step_projected(g, store, zx, state);
            outs[t] = Some(state.0);
        }
        let outs: Vec<Var> = outs.into_iter().map(|o| o.expect("every step visited")).collect();
        g.concat_rows(&outs)
    }
}

/// Bidirectional LSTM layer: forward and backward states concatenated per frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            fwd: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.fwd.hidden + self.bwd.hidden
    }

    pub fn run(&self, g: &mut Graph, store: &ParamStore, xs: Var) -> Var {
        let f = self.fwd.run(g, store, xs, false);
        let b = self.bwd.run(g, store, xs, true);
        g.concat_cols(&[f, b])
    }
}

/// Stack of bidirectional LSTM layers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiLstmStack {
    pub layers: Vec<BiLstm>,
}

impl BiLstmStack {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut out = Vec::with_capacity(layers);
        let mut width = input;
        for l in 0..layers {
            out.push(BiLstm::new(store, &format!("{name}.{l}"), width, hidden, rng));
            width = 2 * hidden;
        }
        Self { layers: out }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, BiLstm::output_dim)
    }

    pub fn run(&self, g: &mut Graph, store: &ParamStore, xs: Var) -> Var {
        self.layers.iter().fold(xs, |x, layer| layer.run(g, store, x))
    }

    /// Concatenation of the last forward state and the first backward state of the top layer.
    pub fn summary(&self, g: &mut Graph, states: Var) -> Var {
        let (t, d) = g.shape(states);
        let half = d / 2;
        let last = g.row(states, t - 1);
        let first = g.row(states, 0);
        let f = g.slice_cols(last, 0, half);
        let b = g.slice_cols(first, half, half);
        g.concat_cols(&[f, b])
    }
}
