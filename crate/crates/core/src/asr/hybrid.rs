//! Variant B: convolutional subsampling, self-attention encoder, transformer
//! decoder, and a CTC head whose label onsets truncate the decoder's view of
//! the encoder. Training places the windows at the onsets of the CTC forced
//! alignment; decoding places them at posterior triggers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ctc::{forced_align, BLANK};
use super::data::{Charset, EOS_CHAR};
use super::decode::{joint_beam_search, trigger_truncate, AttentionDecoder, BeamConfig, TriggerWindows};
use super::{subsampled_len, AsrExample};
use crate::attention::{positional_encoding, DecoderLayer, EncoderLayer};
use crate::error::{Error, Result};
use crate::numerics::{fit, Embedding, FitConfig, Graph, Linear, ParamStore, Tensor, Var};

/// Time reduction of the two stride-2 convolutions.
pub const SUBSAMPLE: usize = 4;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct HybridAsrConfig {
    pub n_feats: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ctc_weight: f64,
    /// CTC posterior a label must exceed to trigger.
    pub trigger_threshold: f64,
    /// Encoder frames visible past each trigger.
    pub lookahead: usize,
    /// Restrict decoder attention to trigger windows in training and decoding.
    pub triggered: bool,
}

impl HybridAsrConfig {
    pub fn toy(n_feats: usize) -> Self {
        Self {
            n_feats,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            enc_layers: 2,
            dec_layers: 1,
            ctc_weight: 0.3,
            trigger_threshold: 0.5,
            lookahead: 2,
            triggered: true,
        }
    }

    pub fn paper(n_feats: usize) -> Self {
        Self {
            d_model: 256,
            d_ff: 1024,
            enc_layers: 12,
            dec_layers: 6,
            ..Self::toy(n_feats)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.n_feats, self.d_model, self.n_heads, self.d_ff, self.enc_layers, self.dec_layers];
        if dims.contains(&0) {
            return Err(Error::InvalidArgument("hybrid ASR dimensions must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 || self.d_model % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be even and divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..=1.0).contains(&self.ctc_weight) {
            return Err(Error::InvalidArgument(format!("ctc_weight {} outside [0, 1]", self.ctc_weight)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HybridAsrNet {
    pub conv1: Linear,
    pub conv2: Linear,
    pub encoder: Vec<EncoderLayer>,
    pub ctc: Linear,
    pub embed: Embedding,
    pub decoder: Vec<DecoderLayer>,
    pub output: Linear,
    pub d_model: usize,
}

fn add_positions(g: &mut Graph, x: Var) -> Var {
    let (n, d) = g.shape(x);
    let pe = positional_encoding(n, d).expect("even model width").table;
    let pe = g.constant(pe);
    g.add(x, pe)
}

impl HybridAsrNet {
    pub fn new(store: &mut ParamStore, cfg: &HybridAsrConfig, vocab: usize, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            conv1: Linear::new(store, "hyb.conv1", KERNEL * cfg.n_feats, d, rng),
            conv2: Linear::new(store, "hyb.conv2", KERNEL * d, d, rng),
            encoder: (0..cfg.enc_layers)
                .map(|l| EncoderLayer::new(store, &format!("hyb.enc{l}"), d, cfg.n_heads, cfg.d_ff, rng))
                .collect::<Result<_>>()?,
            ctc: Linear::new(store, "hyb.ctc", d, vocab, rng),
            embed: Embedding::new(store, "hyb.embed", vocab, d, rng),
            decoder: (0..cfg.dec_layers)
                .map(|l| DecoderLayer::new(store, &format!("hyb.dec{l}"), d, cfg.n_heads, cfg.d_ff, rng))
                .collect::<Result<_>>()?,
            output: Linear::new(store, "hyb.output", d, vocab, rng),
            d_model: d,
        })
    }

    /// `⌈T/4⌉×d` encoder states.
    pub fn encode(&self, g: &mut Graph, s: &ParamStore, feats: Var) -> Var {
        let x = g.unfold(feats, KERNEL, 2, 1);
        let x = self.conv1.forward(g, s, x);
        let x = g.relu(x);
        let x = g.unfold(x, KERNEL, 2, 1);
        let x = self.conv2.forward(g, s, x);
        let x = g.relu(x);
        let mut x = add_positions(g, x);
        for layer in &self.encoder {
            x = layer.forward(g, s, x, None);
        }
        x
    }

    pub fn ctc_log_probs(&self, g: &mut Graph, s: &ParamStore, h: Var) -> Var {
        let z = self.ctc.forward(g, s, h);
        g.log_softmax(z)
    }

    /// Logits for every position of `inputs`; row `i` predicts the unit after `inputs[i]`.
    pub fn decode(&self, g: &mut Graph, s: &ParamStore, memory: Var, inputs: &[usize], cross_mask: Option<&Tensor>) -> Var {
        let x = self.embed.lookup(g, s, inputs);
        let mut x = add_positions(g, x);
        for layer in &self.decoder {
            x = layer.forward_masked(g, s, x, memory, cross_mask);
        }
        self.output.forward(g, s, x)
    }

    /// Joint loss for one utterance. With `lookahead = Some(k)` the decoder
    /// attends through trigger windows placed at the label onsets of the CTC
    /// Viterbi alignment under the current parameters (held constant).
    pub fn loss(&self, g: &mut Graph, s: &ParamStore, feats: &Tensor, labels: &[usize], ctc_weight: f64, lookahead: Option<usize>) -> Result<Var> {
        let x = g.constant(feats.clone());
        let h = self.encode(g, s, x);
        let lp = self.ctc_log_probs(g, s, h);
        let mut inputs = vec![EOS_CHAR];
        inputs.extend_from_slice(labels);
        let mut targets = labels.to_vec();
        targets.push(EOS_CHAR);
        let mask = match lookahead {
            Some(k) => {
                let onsets = forced_align(g.value(lp), labels, BLANK)?;
                Some(TriggerWindows::from_onsets(onsets, k, g.shape(h).0).mask(inputs.len()))
            }
            None => None,
        };
        let logits = self.decode(g, s, h, &inputs, mask.as_ref());
        let att = g.cross_entropy(logits, &targets);
        if ctc_weight == 0.0 {
            return Ok(att);
        }
        let ctc = g.ctc_loss(lp, labels, BLANK);
        let a = g.scale(att, 1.0 - ctc_weight);
        let c = g.scale(ctc, ctc_weight);
        Ok(g.add(a, c))
    }
}

#[derive(Debug, Clone)]
pub struct HybridAsr {
    pub config: HybridAsrConfig,
    pub charset: Charset,
    pub net: HybridAsrNet,
    pub store: ParamStore,
}

impl HybridAsr {
    pub fn new(config: HybridAsrConfig, charset: Charset, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = HybridAsrNet::new(&mut store, &config, charset.len(), &mut rng)?;
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

    /// Encoder states and CTC log-probabilities.
    pub fn encode(&self, feats: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_feats(feats)?;
        let mut g = Graph::inference();
        let x = g.constant(feats.clone());
        let h = self.net.encode(&mut g, &self.store, x);
        let lp = self.net.ctc_log_probs(&mut g, &self.store, h);
        debug_assert_eq!(g.shape(h).0, subsampled_len(feats.rows(), SUBSAMPLE));
        Ok((g.value(h).clone(), g.value(lp).clone()))
    }

    pub fn train(&mut self, data: &[AsrExample], cfg: FitConfig) -> Result<Vec<f64>> {
        for ex in data {
            self.check_feats(&ex.feats)?;
            ex.check_feasible(SUBSAMPLE)?;
        }
        let net = &self.net;
        let w = self.config.ctc_weight;
        let lookahead = self.config.triggered.then_some(self.config.lookahead);
        fit(&mut self.store, data.len(), cfg, |s, i, g| {
            net.loss(g, s, &data[i].feats, &data[i].labels, w, lookahead).map(Some)
        })
    }

    pub fn joint_decode(&self, feats: &Tensor, cfg: &BeamConfig) -> Result<Vec<usize>> {
        cfg.validate()?;
        let (h, lp) = self.encode(feats)?;
        let windows = if self.config.triggered {
            Some(trigger_truncate(&lp.map(f64::exp), self.config.trigger_threshold, self.config.lookahead)?)
        } else {
            None
        };
        let dec = HybridDecoding {
            model: self,
            memory: h,
            windows,
        };
        let cfg = BeamConfig {
            max_len: cfg.max_len.min(feats.rows()),
            ..*cfg
        };
        joint_beam_search(&dec, Some(&lp), &cfg)
    }
}

struct HybridDecoding<'a> {
    model: &'a HybridAsr,
    memory: Tensor,
    windows: Option<TriggerWindows>,
}

impl HybridDecoding<'_> {
    fn cross_mask(&self, n: usize) -> Option<Tensor> {
        let w = self.windows.as_ref().filter(|w| !w.fallback)?;
        Some(w.mask(n))
    }
}

impl AttentionDecoder for HybridDecoding<'_> {
    /// Units consumed so far, starting with the end marker.
    type State = Vec<usize>;

    fn initial(&self) -> Vec<usize> {
        Vec::new()
    }

    fn step(&self, state: &Vec<usize>, prev: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        if prev >= self.model.charset.len() {
            return Err(Error::InvalidArgument(format!("token id {prev} outside charset")));
        }
        let mut inputs = state.clone();
        inputs.push(prev);
        let mask = self.cross_mask(inputs.len());
        let mut g = Graph::inference();
        let mem = g.constant(self.memory.clone());
        let logits = self.model.net.decode(&mut g, &self.model.store, mem, &inputs, mask.as_ref());
        let last = g.row(logits, inputs.len() - 1);
        let lp = g.log_softmax(last);
        let lp = g.value(lp).data().to_vec();
        Ok((inputs, lp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn tiny() -> HybridAsr {
        let cfg = HybridAsrConfig {
            n_feats: 2,
            d_model: 4,
            n_heads: 2,
            d_ff: 6,
            enc_layers: 1,
            dec_layers: 1,
            ctc_weight: 0.3,
            trigger_threshold: 0.5,
            lookahead: 2,
            triggered: true,
        };
        HybridAsr::new(cfg, Charset::from_chars(vec!['a', 'b']).unwrap(), 8).unwrap()
    }

    fn feats(t: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(t, d, (0..t * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn subsampling_shape() {
        let m = tiny();
        for t in [1, 4, 5, 9, 16] {
            let (h, lp) = m.encode(&feats(t, 2, t as u64)).unwrap();
            assert_eq!(h.rows(), subsampled_len(t, 4));
            assert_eq!(h.rows(), t.div_ceil(4));
            assert_eq!(lp.cols(), 4);
        }
    }

    #[test]
    fn hybrid_gradients() {
        let mut m = tiny();
        let x = feats(12, 2, 1);
        let net = m.net.clone();
        let r = grad_check(&mut m.store, 1e-5, |s, g| net.loss(g, s, &x, &[2, 3], 0.3, Some(1))).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn decoding_is_deterministic_and_bounded() {
        let m = tiny();
        let x = feats(12, 2, 2);
        let cfg = BeamConfig {
            max_len: 5,
            ..Default::default()
        };
        let a = m.joint_decode(&x, &cfg).unwrap();
        assert_eq!(a, m.joint_decode(&x, &cfg).unwrap());
        assert!(a.len() <= 5);
        assert!(a.iter().all(|&k| k >= 2));
    }

    #[test]
    fn infeasible_training_data_rejected() {
        let mut m = tiny();
        let ex = AsrExample {
            feats: feats(4, 2, 0),
            labels: vec![2, 3, 2],
        };
        let cfg = FitConfig {
            steps: 1,
            batch: 1,
            lr: 1e-3,
            seed: 0,
        };
        assert!(matches!(m.train(&[ex], cfg), Err(Error::InfeasibleAlignment { .. })));
    }
}
