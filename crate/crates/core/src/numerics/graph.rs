//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] records every operation of one forward pass. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and returns
//! the gradient of a scalar node with respect to every node that depends on a
//! parameter. Row vectors are `1×n` matrices throughout.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{
    log_softmax_slice, matmul_into, matmul_nt_into, matmul_tn_into, softmax_slice, Tensor,
};
use crate::asr::ctc;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Target marker skipped by [`Graph::cross_entropy`].
pub const IGNORE: usize = usize::MAX;

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    LayerNorm {
        x: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    LstmCell {
        z: Var,
        c: Var,
        acts: Tensor,
        tanh_c: Tensor,
    },
    Unfold {
        x: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Ctc {
        logp: Var,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    frozen: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn mat(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    Tensor::matrix(rows, cols, data).expect("op produced mis-sized buffer")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph whose parameters never require gradients; for inference.
    pub fn inference() -> Self {
        Self {
            frozen: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    /// Constant input. Its value is reshaped to 2-D if it is a vector.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let t = if t.shape().len() == 2 {
            t
        } else {
            let (r, c) = (t.rows(), t.cols());
            t.reshape(vec![r, c]).expect("same element count")
        };
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf not tied to a parameter store. Used by gradient checks.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let v = self.constant(t);
        self.nodes[v.0].needs_grad = true;
        v
    }

    /// Binds a parameter; repeated calls within one graph return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let value = store.value(id).clone();
        self.nodes.push(Node {
            value,
            op: Op::Param,
            needs_grad: !self.frozen,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims: {m}x{k} · {k2}x{n}");
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(mat(m, n, out), Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_nt inner dims: {m}x{k} · ({n}x{k2})ᵀ");
        let mut out = vec![0.0; m * n];
        matmul_nt_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(mat(m, n, out), Op::MatMulNT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a), &[a])
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        mat(
            x.rows(),
            x.cols(),
            x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    fn row_broadcast(&self, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1, "broadcast operand must be a single row");
        assert_eq!(x.cols(), r.cols(), "broadcast width mismatch");
        let c = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, r.data()[i % c]))
            .collect();
        mat(x.rows(), c, data)
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let t = self.row_broadcast(a, row, |x, y| x + y);
        self.push(t, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let t = self.row_broadcast(a, row, |x, y| x * y);
        self.push(t, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a).map(|x| x * k);
        self.push(t, Op::Scale(a, k), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let t = self.value(a).map(|x| x + k);
        self.push(t, Op::AddScalar(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Ln(a), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        for r in 0..t.rows() {
            softmax_slice(t.row_mut(r));
        }
        self.push(t, Op::Softmax(a), &[a])
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        for r in 0..t.rows() {
            log_softmax_slice(t.row_mut(r));
        }
        self.push(t, Op::LogSoftmax(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.shape(p);
                assert_eq!(r, rows, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(mat(rows, total, out), Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.shape(parts[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows width mismatch");
            out.extend_from_slice(t.data());
            rows += t.rows();
        }
        self.push(mat(rows, cols, out), Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut out = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            out.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let t = mat(x.rows(), len, out);
        self.push(t, Op::SliceCols(a, start), &[a])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.rows(), "slice_rows out of range");
        let t = x.slice_rows(start, len);
        self.push(t, Op::SliceRows(a, start), &[a])
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        self.slice_rows(a, r, 1)
    }

    /// Stacks the listed rows of `a`; used for embedding lookups.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let x = self.value(a);
        let mut out = Vec::with_capacity(idx.len() * x.cols());
        for &i in idx {
            out.extend_from_slice(x.row(i));
        }
        let t = mat(idx.len(), x.cols(), out);
        self.push(t, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    /// Sum of all entries as a `1×1` node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Summed negative log-likelihood of `targets[r]` under `softmax(logits[r])`.
    /// Rows whose target is [`IGNORE`] contribute nothing.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows(), targets.len(), "one target per row");
        let mut probs = x.clone();
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = probs.row_mut(r);
            if t == IGNORE {
                row.fill(0.0);
                continue;
            }
            log_softmax_slice(row);
            loss -= row[t];
            row.iter_mut().for_each(|v| *v = v.exp());
        }
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (rows, cols) = (x.rows(), x.cols());
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xhat.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let t = xhat.clone();
        self.push(t, Op::LayerNorm { x: a, xhat, inv_std }, &[a])
    }

    /// Fused LSTM cell nonlinearity.
    ///
    /// `z` holds the `k×4H` gate pre-activations in `[input, forget, cell, output]`
    /// order and `c` the `k×H` previous cell. Returns `k×2H` = `[hidden, cell]`.
    pub fn lstm_cell(&mut self, z: Var, c: Var) -> Var {
        let (zt, ct) = (self.value(z), self.value(c));
        let (rows, h) = (ct.rows(), ct.cols());
        assert_eq!(zt.cols(), 4 * h, "gate width must be 4H");
        assert_eq!(zt.rows(), rows);
        let mut acts = zt.clone();
        let mut tanh_c = Tensor::zeros(&[rows, h]);
        let mut out = vec![0.0; rows * 2 * h];
        for r in 0..rows {
            let a = acts.row_mut(r);
            for j in 0..h {
                a[j] = sigmoid(a[j]);
                a[h + j] = sigmoid(a[h + j]);
                a[2 * h + j] = a[2 * h + j].tanh();
                a[3 * h + j] = sigmoid(a[3 * h + j]);
            }
            let cprev = ct.row(r);
            for j in 0..h {
                let cn = a[h + j] * cprev[j] + a[j] * a[2 * h + j];
                let tc = cn.tanh();
                tanh_c.set(r, j, tc);
                out[r * 2 * h + j] = a[3 * h + j] * tc;
                out[r * 2 * h + h + j] = cn;
            }
        }
        self.push(
            mat(rows, 2 * h, out),
            Op::LstmCell { z, c, acts, tanh_c },
            &[z, c],
        )
    }

    /// Sliding windows over rows for strided 1-D convolution.
    ///
    /// Output row `t` concatenates input rows `t·stride − pad .. t·stride − pad + kernel`
    /// with out-of-range rows read as zeros.
    pub fn unfold(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Var {
        let x = self.value(a);
        let (rows, cols) = (x.rows(), x.cols());
        let span = rows + 2 * pad;
        assert!(span >= kernel, "sequence shorter than kernel");
        let out_rows = (span - kernel) / stride + 1;
        let mut out = vec![0.0; out_rows * kernel * cols];
        for t in 0..out_rows {
            for k in 0..kernel {
                let src = (t * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < rows {
                    let dst = t * kernel * cols + k * cols;
                    out[dst..dst + cols].copy_from_slice(x.row(src as usize));
                }
            }
        }
        let t = mat(out_rows, kernel * cols, out);
        self.push(
            t,
            Op::Unfold {
                x: a,
                kernel,
                stride,
                pad,
            },
            &[a],
        )
    }

    /// CTC negative log-likelihood of `labels` given `T×V` log-probabilities.
    /// Infeasible alignments yield `+inf` with zero gradient.
    pub fn ctc_loss(&mut self, logp: Var, labels: &[usize], blank: usize) -> Var {
        let x = self.value(logp);
        let (loss, grad) = match ctc::forward_backward(x, labels, blank) {
            Some((nll, grad)) => (nll, grad),
            None => (f64::INFINITY, Tensor::zeros(x.shape())),
        };
        self.push(Tensor::scalar(loss), Op::Ctc { logp, grad }, &[logp])
    }

    /// Gradients of the scalar `loss` with respect to every differentiable node.
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    /// Runs [`Graph::backward`] and adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) {
        let grads = self.backward(loss);
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }

    fn acc<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> Option<&'a mut Tensor> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        slot.as_mut()
    }

    fn acc_map(&self, grads: &mut [Option<Tensor>], v: Var, g: &Tensor, f: impl Fn(usize, f64) -> f64) {
        if let Some(dst) = self.acc(grads, v) {
            for (i, (d, &gv)) in dst.data_mut().iter_mut().zip(g.data()).enumerate() {
                *d += f(i, gv);
            }
        }
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if let Some(da) = self.acc(grads, *a) {
                    matmul_nt_into(g.data(), bv.data(), da.data_mut(), m, n, k);
                }
                if let Some(db) = self.acc(grads, *b) {
                    matmul_tn_into(av.data(), g.data(), db.data_mut(), m, k, n);
                }
            }
            Op::MatMulNT(a, b) => {
                // out = a · bᵀ, a: m×k, b: n×k
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if let Some(da) = self.acc(grads, *a) {
                    matmul_into(g.data(), bv.data(), da.data_mut(), m, n, k);
                }
                if let Some(db) = self.acc(grads, *b) {
                    matmul_tn_into(g.data(), av.data(), db.data_mut(), m, n, k);
                }
            }
            Op::Transpose(a) => {
                let gt = g.transpose();
                self.acc_map(grads, *a, &gt, |_, x| x);
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |_, x| x);
                self.acc_map(grads, *b, g, |_, x| x);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |_, x| x);
                self.acc_map(grads, *b, g, |_, x| -x);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.acc_map(grads, *a, g, |i, x| x * bv.data()[i]);
                self.acc_map(grads, *b, g, |i, x| x * av.data()[i]);
            }
            Op::AddRow(a, row) => {
                self.acc_map(grads, *a, g, |_, x| x);
                if let Some(dr) = self.acc(grads, *row) {
                    let c = g.cols();
                    for (i, &x) in g.data().iter().enumerate() {
                        dr.data_mut()[i % c] += x;
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                let c = g.cols();
                self.acc_map(grads, *a, g, |i, x| x * rv.data()[i % c]);
                if let Some(dr) = self.acc(grads, *row) {
                    for (i, &x) in g.data().iter().enumerate() {
                        dr.data_mut()[i % c] += x * av.data()[i];
                    }
                }
            }
            Op::Scale(a, k) => self.acc_map(grads, *a, g, |_, x| x * k),
            Op::AddScalar(a) => self.acc_map(grads, *a, g, |_, x| x),
            Op::Tanh(a) => self.acc_map(grads, *a, g, |i, x| {
                let y = out.data()[i];
                x * (1.0 - y * y)
            }),
            Op::Sigmoid(a) => self.acc_map(grads, *a, g, |i, x| {
                let y = out.data()[i];
                x * y * (1.0 - y)
            }),
            Op::Relu(a) => {
                let av = self.value(*a);
                self.acc_map(grads, *a, g, |i, x| if av.data()[i] > 0.0 { x } else { 0.0 })
            }
            Op::Exp(a) => self.acc_map(grads, *a, g, |i, x| x * out.data()[i]),
            Op::Ln(a) => {
                let av = self.value(*a);
                self.acc_map(grads, *a, g, |i, x| x / av.data()[i])
            }
            Op::Softmax(a) => {
                if let Some(da) = self.acc(grads, *a) {
                    for r in 0..out.rows() {
                        let (y, gr) = (out.row(r), g.row(r));
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d += y[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if let Some(da) = self.acc(grads, *a) {
                    for r in 0..out.rows() {
                        let (y, gr) = (out.row(r), g.row(r));
                        let gsum: f64 = gr.iter().sum();
                        for (j, d) in da.row_mut(r).iter_mut().enumerate() {
                            *d += gr[j] - y[j].exp() * gsum;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(dp) = self.acc(grads, p) {
                        for r in 0..g.rows() {
                            let src = &g.row(r)[offset..offset + w];
                            for (d, s) in dp.row_mut(r).iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(dp) = self.acc(grads, p) {
                        for (d, s) in dp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *d += s;
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(da) = self.acc(grads, *a) {
                    for r in 0..g.rows() {
                        let dst = &mut da.row_mut(r)[*start..*start + g.cols()];
                        for (d, s) in dst.iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(da) = self.acc(grads, *a) {
                    let c = g.cols();
                    let dst = &mut da.data_mut()[start * c..start * c + g.len()];
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(da) = self.acc(grads, *a) {
                    for (r, &i) in idx.iter().enumerate() {
                        for (d, s) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                self.acc_map(grads, *a, self.value(*a), |_, _| s);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let s = g.data()[0];
                if let Some(dl) = self.acc(grads, *logits) {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == IGNORE {
                            continue;
                        }
                        let (drow, prow) = (dl.row_mut(r), probs.row(r));
                        for (j, d) in drow.iter_mut().enumerate() {
                            let y = if j == t { 1.0 } else { 0.0 };
                            *d += s * (prow[j] - y);
                        }
                    }
                }
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let n = g.cols() as f64;
                    for r in 0..g.rows() {
                        let (gr, xr) = (g.row(r), xhat.row(r));
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for (j, d) in dx.row_mut(r).iter_mut().enumerate() {
                            *d += inv_std[r] * (gr[j] - mean_g - xr[j] * mean_gx);
                        }
                    }
                }
            }
            Op::LstmCell { z, c, acts, tanh_c } => {
                let h = tanh_c.cols();
                let cprev = self.value(*c);
                let rows = g.rows();
                let mut dz = Tensor::zeros(&[rows, 4 * h]);
                let mut dc = Tensor::zeros(&[rows, h]);
                for r in 0..rows {
                    let (a, gr) = (acts.row(r), g.row(r));
                    for j in 0..h {
                        let (i_g, f_g, c_g, o_g) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let tc = tanh_c.get(r, j);
                        let dh = gr[j];
                        let dcn = gr[h + j] + dh * o_g * (1.0 - tc * tc);
                        let dzr = dz.row_mut(r);
                        dzr[j] = dcn * c_g * i_g * (1.0 - i_g);
                        dzr[h + j] = dcn * cprev.get(r, j) * f_g * (1.0 - f_g);
                        dzr[2 * h + j] = dcn * i_g * (1.0 - c_g * c_g);
                        dzr[3 * h + j] = dh * tc * o_g * (1.0 - o_g);
                        dc.set(r, j, dcn * f_g);
                    }
                }
                self.acc_map(grads, *z, &dz, |_, x| x);
                self.acc_map(grads, *c, &dc, |_, x| x);
            }
            Op::Unfold {
                x,
                kernel,
                stride,
                pad,
            } => {
                if let Some(dx) = self.acc(grads, *x) {
                    let (rows, cols) = (dx.rows(), dx.cols());
                    for t in 0..g.rows() {
                        for k in 0..*kernel {
                            let src = (t * stride + k) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < rows {
                                let off = k * cols;
                                let gs = &g.row(t)[off..off + cols];
                                for (d, s) in dx.row_mut(src as usize).iter_mut().zip(gs) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
            }
            Op::Ctc { logp, grad } => {
                let s = g.data()[0];
                self.acc_map(grads, *logp, grad, |_, x| x * s);
            }
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
