//! Variant A: BiLSTM encoder with an attention LSTM decoder and an auxiliary CTC head.
//!
//! One decoder step:
//!
//! ```text
//! Cᵢ   = attend(dot(sᵢ₋₁, K), H)        K = H (or H·W_k when widths differ)
//! sᵢ   = LSTM([emb(yᵢ₋₁); Cᵢ], sᵢ₋₁)
//! P(yᵢ) = softmax(MLP([sᵢ; Cᵢ]))
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ctc::BLANK;
use super::data::{Charset, EOS_CHAR};
use super::decode::{joint_beam_search, AttentionDecoder, BeamConfig};
use super::AsrExample;
use crate::attention::{attend_graph, dot_scores, AttentionOutput};
use crate::error::{Error, Result};
use crate::numerics::{fit, BiLstmStack, Embedding, FitConfig, Graph, Linear, Lstm, Mlp, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AttentionAsrConfig {
    pub n_feats: usize,
    /// Width of the ReLU input projection.
    pub proj: usize,
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub emb_dim: usize,
    pub dec_hidden: usize,
    pub mlp_hidden: usize,
    /// Weight of the CTC term in the training loss; 0 disables it.
    pub ctc_weight: f64,
}

impl AttentionAsrConfig {
    pub fn toy(n_feats: usize) -> Self {
        Self {
            n_feats,
            proj: 32,
            enc_hidden: 32,
            enc_layers: 2,
            emb_dim: 32,
            dec_hidden: 64,
            mlp_hidden: 64,
            ctc_weight: 0.2,
        }
    }

    pub fn paper(n_feats: usize) -> Self {
        Self {
            n_feats,
            proj: 256,
            enc_hidden: 256,
            enc_layers: 2,
            emb_dim: 128,
            dec_hidden: 256,
            mlp_hidden: 256,
            ctc_weight: 0.2,
        }
    }

    pub fn enc_dim(&self) -> usize {
        2 * self.enc_hidden
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_feats, self.proj, self.enc_hidden, self.enc_layers, self.emb_dim, self.dec_hidden, self.mlp_hidden];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("ASR dimensions must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::InvalidArgument(format!("ctc_weight {} outside [0, 1]", self.ctc_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionAsrNet {
    pub input: Linear,
    pub encoder: BiLstmStack,
    /// Projects encoder states to the decoder width when the two differ.
    pub key: Option<Linear>,
    pub embed: Embedding,
    pub decoder: Lstm,
    pub output: Mlp,
    pub ctc: Linear,
}

/// Decoder recurrent state `sᵢ` (hidden and cell rows).
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub h: Tensor,
    pub c: Tensor,
}

impl AttentionAsrNet {
    pub fn new(store: &mut ParamStore, cfg: &AttentionAsrConfig, vocab: usize, rng: &mut impl Rng) -> Self {
        let enc = cfg.enc_dim();
        Self {
            input: Linear::new(store, "asr.input", cfg.n_feats, cfg.proj, rng),
            encoder: BiLstmStack::new(store, "asr.encoder", cfg.proj, cfg.enc_hidden, cfg.enc_layers, rng),
            key: (enc != cfg.dec_hidden).then(|| Linear::without_bias(store, "asr.key", enc, cfg.dec_hidden, rng)),
            embed: Embedding::new(store, "asr.embed", vocab, cfg.emb_dim, rng),
            decoder: Lstm::new(store, "asr.decoder", cfg.emb_dim + enc, cfg.dec_hidden, rng),
            output: Mlp::new(store, "asr.output", cfg.dec_hidden + enc, cfg.mlp_hidden, vocab, rng),
            ctc: Linear::new(store, "asr.ctc", enc, vocab, rng),
        }
    }

    /// `T×2H` encoder states.
    pub fn encode(&self, g: &mut Graph, s: &ParamStore, feats: Var) -> Var {
        let x = self.input.forward(g, s, feats);
        let x = g.relu(x);
        self.encoder.run(g, s, x)
    }

    pub fn keys(&self, g: &mut Graph, s: &ParamStore, h: Var) -> Var {
        match &self.key {
            Some(k) => k.forward(g, s, h),
            None => h,
        }
    }

    /// One decoder step. Returns the new state, the logits, and the attention
    /// weights, context and scores.
    #[allow(clippy::too_many_arguments)]
    pub fn step(&self, g: &mut Graph, s: &ParamStore, h: Var, keys: Var, state: (Var, Var), prev: usize) -> ((Var, Var), Var, [Var; 3]) {
        let scores = dot_scores(g, state.0, keys);
        let (w, ctx) = attend_graph(g, scores, h);
        let e = self.embed.lookup(g, s, &[prev]);
        let x = g.concat_cols(&[e, ctx]);
        let next = self.decoder.step(g, s, x, state);
        let o = g.concat_cols(&[next.0, ctx]);
        let logits = self.output.forward(g, s, o);
        (next, logits, [w, ctx, scores])
    }

    pub fn ctc_log_probs(&self, g: &mut Graph, s: &ParamStore, h: Var) -> Var {
        let z = self.ctc.forward(g, s, h);
        g.log_softmax(z)
    }

    /// Teacher-forced loss `(1−w)·CE_att + w·CTC` for one utterance.
    pub fn loss(&self, g: &mut Graph, s: &ParamStore, feats: &Tensor, labels: &[usize], ctc_weight: f64) -> Var {
        let x = g.constant(feats.clone());
        let h = self.encode(g, s, x);
        let keys = self.keys(g, s, h);
        let mut state = self.decoder.zero_state(g);
        let mut rows = Vec::with_capacity(labels.len() + 1);
        let mut prev = EOS_CHAR;
        let mut targets = labels.to_vec();
        targets.push(EOS_CHAR);
        for &y in &targets {
            let (next, logits, _) = self.step(g, s, h, keys, state, prev);
            rows.push(logits);
            state = next;
            prev = y;
        }
        let logits = g.concat_rows(&rows);
        let att = g.cross_entropy(logits, &targets);
        if ctc_weight == 0.0 {
            return att;
        }
        let lp = self.ctc_log_probs(g, s, h);
        let ctc = g.ctc_loss(lp, labels, BLANK);
        let a = g.scale(att, 1.0 - ctc_weight);
        let c = g.scale(ctc, ctc_weight);
        g.add(a, c)
    }
}

#[derive(Debug, Clone)]
pub struct AttentionAsr {
    pub config: AttentionAsrConfig,
    pub charset: Charset,
    pub net: AttentionAsrNet,
    pub store: ParamStore,
}

/// Encoder outputs of one utterance, ready for decoding.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub states: Tensor,
    pub keys: Tensor,
    pub ctc_log_probs: Tensor,
}

impl AttentionAsr {
    pub fn new(config: AttentionAsrConfig, charset: Charset, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = AttentionAsrNet::new(&mut store, &config, charset.len(), &mut rng);
        Ok(Self {
            config,
            charset,
            net,
            store,
        })
    }

    fn check_feats(&self, feats: &Tensor) -> Result<()> {
        if feats.rows() == 0 {
            return Err(Error::Empty("feature sequence".into()));
        }
        if feats.cols() != self.config.n_feats {
            return Err(Error::Shape(format!(
                "feature dim {} but the encoder expects {}",
                feats.cols(),
                self.config.n_feats
            )));
        }
        Ok(())
    }

    pub fn encode(&self, feats: &Tensor) -> Result<Encoded> {
        self.check_feats(feats)?;
        let mut g = Graph::inference();
        let s = &self.store;
        let x = g.constant(feats.clone());
        let h = self.net.encode(&mut g, s, x);
        let k = self.net.keys(&mut g, s, h);
        let lp = self.net.ctc_log_probs(&mut g, s, h);
        Ok(Encoded {
            states: g.value(h).clone(),
            keys: g.value(k).clone(),
            ctc_log_probs: g.value(lp).clone(),
        })
    }

    pub fn initial_state(&self) -> DecoderState {
        let z = Tensor::zeros(&[1, self.config.dec_hidden]);
        DecoderState { h: z.clone(), c: z }
    }

    /// One step of the decoder against encoder states `h`; returns the next
    /// state, the output distribution, and the attention used.
    pub fn decode_step(&self, state: &DecoderState, prev_token: usize, h: &Tensor) -> Result<(DecoderState, Tensor, AttentionOutput)> {
        if h.rows() == 0 || h.cols() != self.config.enc_dim() {
            return Err(Error::Shape(format!("encoder states {:?}", h.shape())));
        }
        let mut g = Graph::inference();
        let s = &self.store;
        let hv = g.constant(h.clone());
        let keys = self.net.keys(&mut g, s, hv);
        self.step_with(&mut g, state, prev_token, hv, keys)
    }

    fn step_with(&self, g: &mut Graph, state: &DecoderState, prev: usize, h: Var, keys: Var) -> Result<(DecoderState, Tensor, AttentionOutput)> {
        if prev >= self.charset.len() {
            return Err(Error::InvalidArgument(format!("token id {prev} outside charset")));
        }
        let s = &self.store;
        let st = (g.constant(state.h.clone()), g.constant(state.c.clone()));
        let (next, logits, [w, ctx, scores]) = self.net.step(g, s, h, keys, st, prev);
        let p = g.softmax(logits);
        let flat = |t: &Tensor| Tensor::vector(t.data().to_vec());
        Ok((
            DecoderState {
                h: g.value(next.0).clone(),
                c: g.value(next.1).clone(),
            },
            flat(g.value(p)),
            AttentionOutput {
                weights: flat(g.value(w)),
                context: flat(g.value(ctx)),
                scores: flat(g.value(scores)),
            },
        ))
    }

    pub fn train(&mut self, data: &[AsrExample], cfg: FitConfig) -> Result<Vec<f64>> {
        for ex in data {
            self.check_feats(&ex.feats)?;
            ex.check_feasible(1)?;
        }
        let net = &self.net;
        let w = self.config.ctc_weight;
        fit(&mut self.store, data.len(), cfg, |s, i, g| {
            Ok(Some(net.loss(g, s, &data[i].feats, &data[i].labels, w)))
        })
    }

    /// Greedy attention decoding.
    pub fn greedy(&self, feats: &Tensor, max_len: usize) -> Result<Vec<usize>> {
        let enc = self.encode(feats)?;
        let dec = self.decoding(&enc);
        let mut state = dec.initial();
        let mut prev = EOS_CHAR;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (next, lp) = dec.step(&state, prev)?;
            let k = crate::numerics::tensor::argmax(&lp);
            if k == EOS_CHAR {
                break;
            }
            out.push(k);
            state = next;
            prev = k;
        }
        Ok(out)
    }

    /// Joint CTC/attention beam search.
    pub fn joint_decode(&self, feats: &Tensor, cfg: &BeamConfig) -> Result<Vec<usize>> {
        cfg.validate()?;
        let enc = self.encode(feats)?;
        let dec = self.decoding(&enc);
        let cfg = BeamConfig {
            max_len: cfg.max_len.min(feats.rows()),
            ..*cfg
        };
        joint_beam_search(&dec, Some(&enc.ctc_log_probs), &cfg)
    }

    pub fn decoding<'a>(&'a self, enc: &'a Encoded) -> AttentionAsrDecoding<'a> {
        AttentionAsrDecoding { model: self, enc }
    }
}

/// A model bound to one utterance's encoder outputs.
pub struct AttentionAsrDecoding<'a> {
    model: &'a AttentionAsr,
    enc: &'a Encoded,
}

impl AttentionDecoder for AttentionAsrDecoding<'_> {
    type State = DecoderState;

    fn initial(&self) -> DecoderState {
        self.model.initial_state()
    }

    fn step(&self, state: &DecoderState, prev: usize) -> Result<(DecoderState, Vec<f64>)> {
        let mut g = Graph::inference();
        let h = g.constant(self.enc.states.clone());
        let k = g.constant(self.enc.keys.clone());
        let (next, p, _) = self.model.step_with(&mut g, state, prev, h, k)?;
        let lp = p.data().iter().map(|x| x.ln()).collect();
        Ok((next, lp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{grad_check, lstm_step, LstmState};

    fn tiny() -> AttentionAsr {
        let cfg = AttentionAsrConfig {
            n_feats: 3,
            proj: 4,
            enc_hidden: 3,
            enc_layers: 2,
            emb_dim: 3,
            dec_hidden: 5,
            mlp_hidden: 4,
            ctc_weight: 0.3,
        };
        AttentionAsr::new(cfg, Charset::from_chars(vec!['a', 'b']).unwrap(), 4).unwrap()
    }

    fn feats(t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn encoder_shapes() {
        let m = tiny();
        let e = m.encode(&feats(1, 3, 0)).unwrap();
        assert_eq!(e.states.shape(), &[1, 6]);
        assert_eq!(e.keys.shape(), &[1, 5]);
        assert_eq!(e.ctc_log_probs.shape(), &[1, 4]);
        assert!(m.encode(&feats(2, 4, 0)).is_err());
    }

    #[test]
    fn zero_model_gives_zero_states() {
        let mut m = tiny();
        for p in m.store.iter_mut() {
            p.value.fill(0.0);
        }
        let e = m.encode(&Tensor::zeros(&[4, 3])).unwrap();
        assert!(e.states.data().iter().all(|&x| x == 0.0));
    }

    /// With the forward LSTMs silenced, the states equal a hand-run backward
    /// recurrence over the reversed input.
    #[test]
    fn backward_direction_isolated() {
        let mut m = tiny();
        for layer in &m.net.encoder.layers {
            for id in [layer.fwd.w_x, layer.fwd.w_h, layer.fwd.b] {
                m.store.value_mut(id).fill(0.0);
            }
        }
        let x = feats(5, 3, 1);
        let got = m.encode(&x).unwrap().states;

        let w = m.store.value(m.net.input.w);
        let b = m.store.value(m.net.input.b.unwrap());
        let mut layer_in: Vec<Vec<f64>> = (0..5)
            .map(|t| {
                (0..4)
                    .map(|j| (b.data()[j] + (0..3).map(|i| x.get(t, i) * w.get(i, j)).sum::<f64>()).max(0.0))
                    .collect()
            })
            .collect();
        for layer in &m.net.encoder.layers {
            let weights = layer.bwd.weights(&m.store);
            let mut st = LstmState::zeros(3);
            let mut out = vec![vec![]; 5];
            for t in (0..5).rev() {
                st = lstm_step(&Tensor::row_vector(layer_in[t].clone()), &st, &weights).unwrap();
                let mut row = vec![0.0; 3];
                row.extend_from_slice(st.hidden.data());
                out[t] = row;
            }
            layer_in = out;
        }
        for t in 0..5 {
            for j in 0..6 {
                assert!((got.get(t, j) - layer_in[t][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_distribution_and_forced_attention() {
        let m = tiny();
        let e = m.encode(&feats(1, 3, 2)).unwrap();
        let mut st = m.initial_state();
        let mut prev = EOS_CHAR;
        for _ in 0..4 {
            let (next, p, att) = m.decode_step(&st, prev, &e.states).unwrap();
            assert!((p.sum() - 1.0).abs() < 1e-6);
            assert_eq!(att.weights.data(), &[1.0]);
            assert!(att.context.max_abs_diff(&Tensor::vector(e.states.data().to_vec())) < 1e-15);
            st = next;
            prev = 2;
        }
        assert!(m.decode_step(&st, 9, &e.states).is_err());
    }

    #[test]
    fn decoder_gradients() {
        let mut m = tiny();
        let x = feats(3, 3, 3);
        let net = m.net.clone();
        let r = grad_check(&mut m.store, 1e-5, |s, g| Ok(net.loss(g, s, &x, &[2, 3], 0.3))).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn greedy_and_beam_one_agree() {
        let m = tiny();
        let x = feats(6, 3, 5);
        let greedy = m.greedy(&x, 6).unwrap();
        let cfg = BeamConfig {
            beam: 1,
            lambda: 0.0,
            max_len: 6,
        };
        assert_eq!(m.joint_decode(&x, &cfg).unwrap(), greedy);
    }
}
