//! Attention scorers, scaled dot-product and multi-head attention,
//! sinusoidal positions, and the transformer blocks built from them.
//!
//! Graph versions take a [`Graph`] and return [`Var`]s; the tensor functions
//! are thin inference wrappers with shape validation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, ParamId, ParamStore, Tensor, Var};

/// Additive mask value for blocked positions.
pub const MASKED: f64 = -1e9;

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub weights: Tensor,
    pub context: Tensor,
    pub scores: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionalEncoding {
    pub table: Tensor,
}

impl PositionalEncoding {
    pub fn max_len(&self) -> usize {
        self.table.rows()
    }

    pub fn d_model(&self) -> usize {
        self.table.cols()
    }

    /// First `len` rows.
    pub fn prefix(&self, len: usize) -> Result<Tensor> {
        if len > self.max_len() {
            return Err(Error::InvalidArgument(format!(
                "sequence length {len} exceeds positional table of {}",
                self.max_len()
            )));
        }
        Ok(self.table.slice_rows(0, len))
    }
}

/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(...)`.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Result<PositionalEncoding> {
    if max_len == 0 || d_model == 0 {
        return Err(Error::InvalidArgument("positional table needs positive sizes".into()));
    }
    if d_model % 2 != 0 {
        return Err(Error::InvalidArgument(format!("d_model {d_model} must be even")));
    }
    let mut table = Tensor::zeros(&[max_len, d_model]);
    for pos in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            table.set(pos, 2 * i, angle.sin());
            table.set(pos, 2 * i + 1, angle.cos());
        }
    }
    Ok(PositionalEncoding { table })
}

/// `n×n` additive mask blocking attention to later positions.
pub fn causal_mask(n: usize) -> Tensor {
    let mut m = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            m.set(i, j, MASKED);
        }
    }
    m
}

// Graph versions.

/// `1×T` scores `s·hᵢ` for a `1×d` query and `T×d` states.
pub fn dot_scores(g: &mut Graph, s: Var, h: Var) -> Var {
    g.matmul_nt(s, h)
}

/// `1×T` scores `sᵀ W_a hᵢ`.
pub fn matrix_scores(g: &mut Graph, s: Var, h: Var, w_a: Var) -> Var {
    let sw = g.matmul(s, w_a);
    g.matmul_nt(sw, h)
}

/// Softmax weights and the weighted sum of the rows of `h`.
pub fn attend_graph(g: &mut Graph, scores: Var, h: Var) -> (Var, Var) {
    let w = g.softmax(scores);
    let c = g.matmul(w, h);
    (w, c)
}

/// `softmax(QKᵀ/√d_k + mask) V`.
pub fn scaled_dot_graph(g: &mut Graph, q: Var, k: Var, v: Var, mask: Option<&Tensor>) -> Var {
    let dk = g.shape(q).1;
    let s = g.matmul_nt(q, k);
    let mut s = g.scale(s, 1.0 / (dk as f64).sqrt());
    if let Some(m) = mask {
        let m = g.constant(m.clone());
        s = g.add(s, m);
    }
    let w = g.softmax(s);
    g.matmul(w, v)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, n_heads: usize, rng: &mut impl Rng) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {d_model} not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            wq: Linear::new(store, &format!("{name}.q"), d_model, d_model, rng),
            wk: Linear::new(store, &format!("{name}.k"), d_model, d_model, rng),
            wv: Linear::new(store, &format!("{name}.v"), d_model, d_model, rng),
            wo: Linear::new(store, &format!("{name}.o"), d_model, d_model, rng),
            n_heads,
            d_model,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, q: Var, kv: Var, mask: Option<&Tensor>) -> Var {
        let qp = self.wq.forward(g, store, q);
        let kp = self.wk.forward(g, store, kv);
        let vp = self.wv.forward(g, store, kv);
        let dh = self.d_model / self.n_heads;
        let heads: Vec<Var> = (0..self.n_heads)
            .map(|h| {
                let qh = g.slice_cols(qp, h * dh, dh);
                let kh = g.slice_cols(kp, h * dh, dh);
                let vh = g.slice_cols(vp, h * dh, dh);
                scaled_dot_graph(g, qh, kh, vh, mask)
            })
            .collect();
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        self.wo.forward(g, store, cat)
    }
}

/// Layer normalisation with learned gain and bias.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add_filled(format!("{name}.gain"), 1, dim, 1.0),
            bias: store.add_filled(format!("{name}.bias"), 1, dim, 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm(x, 1e-5);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

/// Position-wise ReLU feed-forward block.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Self {
        Self {
            inner: Linear::new(store, &format!("{name}.inner"), d_model, d_ff, rng),
            outer: Linear::new(store, &format!("{name}.outer"), d_ff, d_model, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let h = self.inner.forward(g, store, x);
        let h = g.relu(h);
        self.outer.forward(g, store, h)
    }
}

/// Post-norm self-attention encoder layer.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), d_model, n_heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model),
            ff: FeedForward::new(store, &format!("{name}.ff"), d_model, d_ff, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: Option<&Tensor>) -> Var {
        let a = self.attn.forward(g, store, x, x, mask);
        let x = g.add(x, a);
        let x = self.norm1.forward(g, store, x);
        let f = self.ff.forward(g, store, x);
        let x = g.add(x, f);
        self.norm2.forward(g, store, x)
    }
}

/// Post-norm decoder layer: causal self-attention, then attention over a memory.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecoderLayer {
    pub self_attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub cross_attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
    pub norm3: LayerNorm,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, name: &str, d_model: usize, n_heads: usize, d_ff: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self"), d_model, n_heads, rng)?,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d_model),
            cross_attn: MultiHeadAttention::new(store, &format!("{name}.cross"), d_model, n_heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d_model),
            ff: FeedForward::new(store, &format!("{name}.ff"), d_model, d_ff, rng),
            norm3: LayerNorm::new(store, &format!("{name}.norm3"), d_model),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, memory: Var) -> Var {
        self.forward_masked(g, store, x, memory, None)
    }

    /// [`forward`](Self::forward) with an additive `n×T` mask on the memory attention.
    pub fn forward_masked(&self, g: &mut Graph, store: &ParamStore, x: Var, memory: Var, cross_mask: Option<&Tensor>) -> Var {
        let n = g.shape(x).0;
        let mask = causal_mask(n);
        let a = self.self_attn.forward(g, store, x, x, Some(&mask));
        let x = g.add(x, a);
        let x = self.norm1.forward(g, store, x);
        let c = self.cross_attn.forward(g, store, x, memory, cross_mask);
        let x = g.add(x, c);
        let x = self.norm2.forward(g, store, x);
        let f = self.ff.forward(g, store, x);
        let x = g.add(x, f);
        self.norm3.forward(g, store, x)
    }
}

// Tensor wrappers.

fn as_row(s: &Tensor, what: &str) -> Result<Tensor> {
    if s.is_empty() {
        return Err(Error::Empty(what.into()));
    }
    if s.shape().len() == 2 && s.rows() != 1 {
        return Err(Error::Shape(format!("{what}: expected a single vector, got {:?}", s.shape())));
    }
    Ok(Tensor::row_vector(s.data().to_vec()))
}

fn as_matrix(h: &Tensor, what: &str) -> Result<Tensor> {
    if h.is_empty() {
        return Err(Error::Empty(what.into()));
    }
    h.clone().reshape(vec![h.rows(), h.cols()])
}

fn flat(t: &Tensor) -> Tensor {
    Tensor::vector(t.data().to_vec())
}

/// `score_i = s·hᵢ` over the rows of `h`.
pub fn dot_score(s: &Tensor, h: &Tensor) -> Result<Tensor> {
    let (s, h) = (as_row(s, "query")?, as_matrix(h, "encoder states")?);
    if s.cols() != h.cols() {
        return Err(Error::Shape(format!("query dim {} vs state dim {}", s.cols(), h.cols())));
    }
    let mut g = Graph::inference();
    let (sv, hv) = (g.constant(s), g.constant(h));
    let out = dot_scores(&mut g, sv, hv);
    Ok(flat(g.value(out)))
}

/// `score_i = sᵀ W_a hᵢ`.
pub fn matrix_score(s: &Tensor, h: &Tensor, w_a: &Tensor) -> Result<Tensor> {
    let (s, h) = (as_row(s, "query")?, as_matrix(h, "encoder states")?);
    if w_a.shape() != [s.cols(), h.cols()] {
        return Err(Error::Shape(format!(
            "W_a {:?} must be {}×{}",
            w_a.shape(),
            s.cols(),
            h.cols()
        )));
    }
    let mut g = Graph::inference();
    let (sv, hv, wv) = (g.constant(s), g.constant(h), g.constant(w_a.clone()));
    let out = matrix_scores(&mut g, sv, hv, wv);
    Ok(flat(g.value(out)))
}

/// Softmax over `scores` and the matching convex combination of `h` rows.
pub fn attend(scores: &Tensor, h: &Tensor) -> Result<AttentionOutput> {
    let h = as_matrix(h, "encoder states")?;
    let sc = as_row(scores, "scores")?;
    if sc.cols() != h.rows() {
        return Err(Error::Shape(format!("{} scores for {} states", sc.cols(), h.rows())));
    }
    let mut g = Graph::inference();
    let (sv, hv) = (g.constant(sc), g.constant(h));
    let (w, c) = attend_graph(&mut g, sv, hv);
    Ok(AttentionOutput {
        weights: flat(g.value(w)),
        context: flat(g.value(c)),
        scores: flat(scores),
    })
}

pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (q, k, v) = (as_matrix(q, "Q")?, as_matrix(k, "K")?, as_matrix(v, "V")?);
    if q.cols() != k.cols() {
        return Err(Error::Shape(format!("Q dim {} vs K dim {}", q.cols(), k.cols())));
    }
    if k.rows() != v.rows() {
        return Err(Error::Shape(format!("K has {} rows, V has {}", k.rows(), v.rows())));
    }
    let mut g = Graph::inference();
    let (qv, kv, vv) = (g.constant(q), g.constant(k), g.constant(v));
    let out = scaled_dot_graph(&mut g, qv, kv, vv, None);
    Ok(g.value(out).clone())
}

/// Multi-head attention of `q` over `k`/`v` (which must be the same tensor
/// for the projection layout used here: keys and values share one input).
pub fn multi_head(q: &Tensor, kv: &Tensor, mha: &MultiHeadAttention, store: &ParamStore) -> Result<Tensor> {
    let (q, kv) = (as_matrix(q, "Q")?, as_matrix(kv, "K/V")?);
    if q.cols() != mha.d_model || kv.cols() != mha.d_model {
        return Err(Error::Shape(format!("inputs must have d_model {} columns", mha.d_model)));
    }
    let mut g = Graph::inference();
    let (qv, kvv) = (g.constant(q), g.constant(kv));
    let out = mha.forward(&mut g, store, qv, kvv, None);
    Ok(g.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn dot_score_examples() {
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(dot_score(&Tensor::vector(vec![1.0, 0.0]), &h).unwrap().data(), &[1.0, 0.0]);
        let z = dot_score(&Tensor::vector(vec![0.0, 0.0]), &h).unwrap();
        let a = attend(&z, &h).unwrap();
        assert_eq!(a.weights.data(), &[0.5, 0.5]);
        assert!(dot_score(&Tensor::vector(vec![1.0]), &h).is_err());
    }

    #[test]
    fn scores_match_loop_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (t, ds, dh) = (rng.gen_range(1..8), rng.gen_range(1..6), rng.gen_range(1..6));
            let s = random(&mut rng, 1, ds);
            let h = random(&mut rng, t, dh);
            let w = random(&mut rng, ds, dh);
            let m = matrix_score(&s, &h, &w).unwrap();
            for i in 0..t {
                let mut want = 0.0;
                for a in 0..ds {
                    for b in 0..dh {
                        want += s.data()[a] * w.get(a, b) * h.get(i, b);
                    }
                }
                assert!((m.data()[i] - want).abs() < 1e-12);
            }
            let h2 = random(&mut rng, t, ds);
            let d = dot_score(&s, &h2).unwrap();
            for i in 0..t {
                let want: f64 = (0..ds).map(|a| s.data()[a] * h2.get(i, a)).sum();
                assert!((d.data()[i] - want).abs() < 1e-12);
            }
            // Identity reduction is exact.
            assert_eq!(matrix_score(&s, &h2, &Tensor::identity(ds)).unwrap(), d);
        }
    }

    #[test]
    fn zero_matrix_gives_uniform_weights() {
        let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let sc = matrix_score(&Tensor::vector(vec![1.0, 1.0]), &h, &Tensor::zeros(&[2, 2])).unwrap();
        let a = attend(&sc, &h).unwrap();
        for w in a.weights.data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(matrix_score(&Tensor::vector(vec![1.0, 1.0]), &h, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn attend_examples() {
        let h = Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let a = attend(&Tensor::vector(vec![5.0]), &h).unwrap();
        assert_eq!(a.weights.data(), &[1.0]);
        assert_eq!(a.context.data(), &[0.3, -0.7]);
        let h = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0]]).unwrap();
        let a = attend(&Tensor::vector(vec![0.4, 0.4]), &h).unwrap();
        assert_eq!(a.context.data(), &[2.0, 4.0]);
        assert!(attend(&Tensor::vector(vec![]), &Tensor::zeros(&[0, 2])).is_err());
        assert!(attend(&Tensor::vector(vec![1.0]), &h).is_err());
    }

    #[test]
    fn attend_matches_weighted_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let (t, d) = (rng.gen_range(1..10), rng.gen_range(1..6));
            let sc = random(&mut rng, 1, t);
            let h = random(&mut rng, t, d);
            let a = attend(&sc, &h).unwrap();
            let m = sc.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = sc.data().iter().map(|x| (x - m).exp()).sum();
            for c in 0..d {
                let want: f64 = (0..t).map(|j| (sc.data()[j] - m).exp() / z * h.get(j, c)).sum();
                assert!((a.context.data()[c] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn scaled_dot_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random(&mut rng, 3, 4);
        let k = random(&mut rng, 1, 4);
        let v = random(&mut rng, 1, 5);
        let out = scaled_dot_attention(&q, &k, &v).unwrap();
        for r in 0..3 {
            assert_eq!(out.row(r), v.row(0));
        }
        let k = random(&mut rng, 6, 64);
        let v = random(&mut rng, 6, 3);
        let out = scaled_dot_attention(&Tensor::zeros(&[2, 64]), &k, &v).unwrap();
        for c in 0..3 {
            let mean: f64 = (0..6).map(|j| v.get(j, c)).sum::<f64>() / 6.0;
            assert!((out.get(0, c) - mean).abs() < 1e-12);
        }
        assert!(scaled_dot_attention(&Tensor::zeros(&[2, 3]), &k, &v).is_err());
        assert!(scaled_dot_attention(&Tensor::zeros(&[2, 64]), &k, &Tensor::zeros(&[5, 3])).is_err());
    }

    fn set_identity(store: &mut ParamStore, l: &Linear) {
        *store.value_mut(l.w) = Tensor::identity(l.input);
        if let Some(b) = l.b {
            store.value_mut(b).fill(0.0);
        }
    }

    #[test]
    fn single_identity_head_reduces_to_scaled_dot() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 4, 1, &mut rng).unwrap();
        for l in [mha.wq, mha.wk, mha.wv, mha.wo] {
            set_identity(&mut store, &l);
        }
        let q = random(&mut rng, 3, 4);
        let kv = random(&mut rng, 5, 4);
        let a = multi_head(&q, &kv, &mha, &store).unwrap();
        let b = scaled_dot_attention(&q, &kv, &kv).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn two_heads_match_manual_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "mha", 6, 2, &mut rng).unwrap();
        let q = random(&mut rng, 3, 6);
        let kv = random(&mut rng, 4, 6);
        let got = multi_head(&q, &kv, &mha, &store).unwrap();

        let proj = |x: &Tensor, l: &Linear| {
            let mut y = crate::numerics::matmul(x, store.value(l.w)).unwrap();
            let b = store.value(l.b.unwrap());
            for r in 0..y.rows() {
                for c in 0..y.cols() {
                    y.set(r, c, y.get(r, c) + b.data()[c]);
                }
            }
            y
        };
        let (qp, kp, vp) = (proj(&q, &mha.wq), proj(&kv, &mha.wk), proj(&kv, &mha.wv));
        let cols = |t: &Tensor, s: usize| {
            Tensor::from_rows(&(0..t.rows()).map(|r| t.row(r)[s..s + 3].to_vec()).collect::<Vec<_>>()).unwrap()
        };
        let h0 = scaled_dot_attention(&cols(&qp, 0), &cols(&kp, 0), &cols(&vp, 0)).unwrap();
        let h1 = scaled_dot_attention(&cols(&qp, 3), &cols(&kp, 3), &cols(&vp, 3)).unwrap();
        let cat = Tensor::from_rows(&(0..3).map(|r| [h0.row(r), h1.row(r)].concat()).collect::<Vec<_>>()).unwrap();
        let want = proj(&cat, &mha.wo);
        assert!(got.max_abs_diff(&want) < 1e-12);
        assert_eq!(got.shape(), &[3, 6]);
        assert!(MultiHeadAttention::new(&mut store, "bad", 6, 4, &mut rng).is_err());
    }

    #[test]
    fn positional_examples() {
        let pe = positional_encoding(50, 8).unwrap();
        assert_eq!(pe.table.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.table.data().iter().all(|x| (-1.0..=1.0).contains(x)));
        let pe = positional_encoding(2, 2).unwrap();
        assert!((pe.table.get(1, 0) - 0.84147).abs() < 1e-5);
        assert!(positional_encoding(4, 3).is_err());
        assert!(positional_encoding(0, 4).is_err());
        assert_eq!(positional_encoding(9, 6).unwrap(), positional_encoding(9, 6).unwrap());
    }

    #[test]
    fn causal_mask_blocks_future() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, 4, 2);
        let mut g = Graph::inference();
        let xv = g.constant(x.clone());
        let out = scaled_dot_graph(&mut g, xv, xv, xv, Some(&causal_mask(4)));
        assert_eq!(g.value(out).row(0), x.row(0));
    }

    #[test]
    fn transformer_layers_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let enc = EncoderLayer::new(&mut store, "enc", 4, 2, 6, &mut rng).unwrap();
        let dec = DecoderLayer::new(&mut store, "dec", 4, 2, 6, &mut rng).unwrap();
        let src = random(&mut rng, 3, 4);
        let tgt = random(&mut rng, 2, 4);
        let r = grad_check(&mut store, 1e-5, |s, g| {
            let x = g.constant(src.clone());
            let m = enc.forward(g, s, x, None);
            let y = g.constant(tgt.clone());
            let o = dec.forward(g, s, y, m);
            Ok(g.cross_entropy(o, &[1, 3]))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn weights_sum_to_one(scores in prop::collection::vec(-50.0f64..50.0, 1..12)) {
            let n = scores.len();
            let h = Tensor::zeros(&[n, 2]);
            let a = attend(&Tensor::vector(scores.clone()), &h).unwrap();
            prop_assert!((a.weights.sum() - 1.0).abs() < 1e-6);
            prop_assert!(a.weights.data().iter().all(|w| *w >= 0.0));
        }

        #[test]
        fn argmax_shift_invariant(scores in prop::collection::vec(-20.0f64..20.0, 1..10), shift in -100.0f64..100.0) {
            let n = scores.len();
            let h = Tensor::zeros(&[n, 1]);
            let a = attend(&Tensor::vector(scores.clone()), &h).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|x| x + shift).collect();
            let b = attend(&Tensor::vector(shifted), &h).unwrap();
            prop_assert_eq!(crate::numerics::tensor::argmax(a.weights.data()), crate::numerics::tensor::argmax(b.weights.data()));
        }

        #[test]
        fn outputs_in_convex_hull(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (n, m, d, dv) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..5), rng.gen_range(1..4));
            let (q, k, v) = (random(&mut rng, n, d), random(&mut rng, m, d), random(&mut rng, m, dv));
            let out = scaled_dot_attention(&q, &k, &v).unwrap();
            for c in 0..dv {
                let lo = (0..m).map(|j| v.get(j, c)).fold(f64::INFINITY, f64::min);
                let hi = (0..m).map(|j| v.get(j, c)).fold(f64::NEG_INFINITY, f64::max);
                for r in 0..n {
                    prop_assert!(out.get(r, c) >= lo - 1e-12 && out.get(r, c) <= hi + 1e-12);
                }
            }
        }
    }
}
