//! Sentence VAE over (word, language-tag) pairs with KL cost annealing.
//!
//! Encoder: LSTM over word ⊕ tag embeddings; its last state gives the
//! diagonal Gaussian posterior. Decoder: LSTM started from `tanh(W z)` and
//! fed `z` at every step, emitting a word and a tag per position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{accumulate, Adam, AdamConfig, Embedding, Graph, Linear, Lstm, ParamStore, Tensor, Var, IGNORE};
use crate::tokenizer::{Lang, TaggedSentence, TaggedToken, Vocab, EOS, RESERVED};

const TAG_NONE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct VaeConfig {
    pub emb_dim: usize,
    pub tag_dim: usize,
    pub hidden: usize,
    pub latent: usize,
    pub max_len: usize,
    /// Fraction of training over which β rises linearly from 0 to 1.
    pub warmup_fraction: f64,
    pub lr: f64,
    pub batch: usize,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            emb_dim: 32,
            tag_dim: 4,
            hidden: 128,
            latent: 16,
            max_len: 30,
            warmup_fraction: 0.5,
            lr: 3e-3,
            batch: 16,
        }
    }
}

/// KL weight at `step` of `total`: linear from 0 over the warm-up, then 1.
pub fn beta(step: usize, total: usize, warmup_fraction: f64) -> f64 {
    let warm = warmup_fraction * total as f64;
    if warm <= 0.0 {
        return 1.0;
    }
    (step as f64 / warm).min(1.0)
}

/// `KL(N(μ, diag σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − ln σ²)` with `logvar = ln σ²`.
pub fn gaussian_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VaeNet {
    pub words: Embedding,
    pub tags: Embedding,
    pub encoder: Lstm,
    pub mu: Linear,
    pub logvar: Linear,
    pub init: Linear,
    pub decoder: Lstm,
    pub word_out: Linear,
    pub tag_out: Linear,
}

#[derive(Debug, Clone)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub vocab: Vocab,
    pub net: VaeNet,
    pub store: ParamStore,
}

/// Terms of the negative ELBO, summed over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Elbo {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

fn tag_index(l: Lang) -> usize {
    match l {
        Lang::L1 => 0,
        Lang::L2 => 1,
    }
}

impl VaeNet {
    pub fn new(store: &mut ParamStore, cfg: &VaeConfig, vocab: usize, rng: &mut impl Rng) -> Self {
        let inp = cfg.emb_dim + cfg.tag_dim;
        Self {
            words: Embedding::new(store, "vae.words", vocab, cfg.emb_dim, rng),
            tags: Embedding::new(store, "vae.tags", 3, cfg.tag_dim, rng),
            encoder: Lstm::new(store, "vae.encoder", inp, cfg.hidden, rng),
            mu: Linear::new(store, "vae.mu", cfg.hidden, cfg.latent, rng),
            logvar: Linear::new(store, "vae.logvar", cfg.hidden, cfg.latent, rng),
            init: Linear::new(store, "vae.init", cfg.latent, cfg.hidden, rng),
            decoder: Lstm::new(store, "vae.decoder", inp + cfg.latent, cfg.hidden, rng),
            word_out: Linear::new(store, "vae.word_out", cfg.hidden, vocab, rng),
            tag_out: Linear::new(store, "vae.tag_out", cfg.hidden, 2, rng),
        }
    }

    fn inputs(&self, g: &mut Graph, s: &ParamStore, words: &[usize], tags: &[usize]) -> Var {
        let w = self.words.lookup(g, s, words);
        let t = self.tags.lookup(g, s, tags);
        g.concat_cols(&[w, t])
    }

    /// Posterior mean and log-variance rows.
    pub fn posterior(&self, g: &mut Graph, s: &ParamStore, words: &[usize], tags: &[usize]) -> (Var, Var) {
        let x = self.inputs(g, s, words, tags);
        let states = self.encoder.run(g, s, x, false);
        let last = g.row(states, words.len() - 1);
        (self.mu.forward(g, s, last), self.logvar.forward(g, s, last))
    }

    fn initial_state(&self, g: &mut Graph, s: &ParamStore, z: Var) -> (Var, Var) {
        let h = self.init.forward(g, s, z);
        let h = g.tanh(h);
        let c = g.constant(Tensor::zeros(&[1, self.decoder.hidden]));
        (h, c)
    }

    /// Negative ELBO terms for one sentence given the standard-normal draw `eps`.
    pub fn loss(&self, g: &mut Graph, s: &ParamStore, words: &[usize], tags: &[usize], eps: &Tensor, beta: f64) -> (Var, Var, Var) {
        let (mu, logvar) = self.posterior(g, s, words, tags);
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let e = g.constant(eps.clone());
        let noise = g.mul(sigma, e);
        let z = g.add(mu, noise);

        let mu2 = g.mul(mu, mu);
        let var = g.exp(logvar);
        let k = g.add(mu2, var);
        let k = g.sub(k, logvar);
        let k = g.add_scalar(k, -1.0);
        let k = g.sum(k);
        let kl = g.scale(k, 0.5);

        let n = words.len();
        let mut in_words = vec![crate::tokenizer::BOS];
        in_words.extend_from_slice(words);
        let mut in_tags = vec![TAG_NONE];
        in_tags.extend_from_slice(tags);
        let x = self.inputs(g, s, &in_words, &in_tags);
        let zs = g.gather_rows(z, &vec![0; n + 1]);
        let x = g.concat_cols(&[x, zs]);
        let init = self.initial_state(g, s, z);
        let h = self.decoder.run_from(g, s, x, false, init);
        let wl = self.word_out.forward(g, s, h);
        let tl = self.tag_out.forward(g, s, h);
        let mut w_tgt = words.to_vec();
        w_tgt.push(EOS);
        let mut t_tgt = tags.to_vec();
        t_tgt.push(IGNORE);
        let rw = g.cross_entropy(wl, &w_tgt);
        let rt = g.cross_entropy(tl, &t_tgt);
        let recon = g.add(rw, rt);
        let weighted = g.scale(kl, beta);
        (g.add(recon, weighted), recon, kl)
    }
}

impl VaeModel {
    pub fn new(config: VaeConfig, corpus: &[TaggedSentence], seed: u64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("VAE corpus".into()));
        }
        if config.latent == 0 || config.hidden == 0 || config.max_len == 0 {
            return Err(Error::InvalidArgument("VAE sizes must be positive".into()));
        }
        let vocab = Vocab::from_words(corpus.iter().flat_map(|s| s.tokens.iter().map(|t| t.word.as_str())));
        Ok(Self::with_vocab(config, vocab, seed))
    }

    pub fn with_vocab(config: VaeConfig, vocab: Vocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = VaeNet::new(&mut store, &config, vocab.len(), &mut rng);
        Self {
            config,
            vocab,
            net,
            store,
        }
    }

    /// Word ids and tag indices, truncated to `max_len`.
    pub fn encode_sentence(&self, s: &TaggedSentence) -> (Vec<usize>, Vec<usize>) {
        s.tokens
            .iter()
            .take(self.config.max_len)
            .map(|t| (self.vocab.word_id(&t.word), tag_index(t.lang)))
            .unzip()
    }

    fn draw(&self, rng: &mut impl Rng) -> Tensor {
        Tensor::row_vector((0..self.config.latent).map(|_| rng.sample(StandardNormal)).collect())
    }

    /// Trains for `steps` minibatch updates; returns the per-step mean loss.
    pub fn train(&mut self, corpus: &[TaggedSentence], steps: usize, seed: u64) -> Result<Vec<f64>> {
        if corpus.is_empty() {
            return Err(Error::Empty("VAE corpus".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut opt = Adam::new(AdamConfig::with_lr(self.config.lr), &self.store);
        let data: Vec<(Vec<usize>, Vec<usize>)> = corpus.iter().map(|s| self.encode_sentence(s)).collect();
        let batch = self.config.batch.clamp(1, data.len());
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut cursor = data.len();
        let mut curve = Vec::with_capacity(steps);
        for step in 0..steps {
            let mut items = Vec::with_capacity(batch);
            for _ in 0..batch {
                if cursor == data.len() {
                    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                    cursor = 0;
                }
                items.push((order[cursor], self.draw(&mut rng)));
                cursor += 1;
            }
            let b = beta(step, steps, self.config.warmup_fraction);
            let net = self.net;
            let total = accumulate(&mut self.store, &items, |s, (i, eps), g| {
                let (w, t) = &data[*i];
                Ok(Some(net.loss(g, s, w, t, eps, b).0))
            })?;
            self.store.scale_grads(1.0 / batch as f64);
            opt.step(&mut self.store);
            curve.push(total / batch as f64);
        }
        Ok(curve)
    }

    fn decode(&self, z: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<TaggedSentence> {
        let mut rng = rng;
        let mut g = Graph::inference();
        let s = &self.store;
        let zv = g.constant(z.clone());
        let mut state = self.net.initial_state(&mut g, s, zv);
        let (mut word, mut tag) = (crate::tokenizer::BOS, TAG_NONE);
        let mut out = Vec::new();
        for step in 0..self.config.max_len {
            let x = self.net.inputs(&mut g, s, &[word], &[tag]);
            let x = g.concat_cols(&[x, zv]);
            state = self.net.decoder.step(&mut g, s, x, state);
            let wl = self.net.word_out.forward(&mut g, s, state.0);
            let tl = self.net.tag_out.forward(&mut g, s, state.0);
            let mut logits = g.value(wl).data().to_vec();
            for (id, l) in logits.iter_mut().enumerate() {
                let reserved = id < RESERVED.len() && id != EOS;
                if reserved || (id == EOS && step == 0) {
                    *l = f64::NEG_INFINITY;
                }
            }
            word = match rng.as_deref_mut() {
                Some(r) => sample_logits(&logits, r),
                None => crate::numerics::tensor::argmax(&logits),
            };
            if word == EOS {
                break;
            }
            let tags = g.value(tl).data();
            tag = usize::from(tags[1] > tags[0]);
            let lang = if tag == 1 { Lang::L2 } else { Lang::L1 };
            out.push(TaggedToken::new(self.vocab.piece(word), lang));
        }
        TaggedSentence::new(out, None)
    }

    /// Greedy decode from the posterior mean of `s`.
    pub fn reconstruct(&self, s: &TaggedSentence) -> Result<TaggedSentence> {
        let (w, t) = self.encode_sentence(s);
        let mut g = Graph::inference();
        let (mu, _) = self.net.posterior(&mut g, &self.store, &w, &t);
        let mu = g.value(mu).clone();
        self.decode(&mu, None)
    }
}

fn sample_logits(logits: &[f64], rng: &mut impl Rng) -> usize {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let mut u = rng.gen::<f64>() * ps.iter().sum::<f64>();
    for (i, p) in ps.iter().enumerate() {
        if *p > 0.0 {
            if u < *p {
                return i;
            }
            u -= p;
        }
    }
    ps.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Negative ELBO over a batch at training `step` of `total_steps`. The
/// reparameterisation noise is drawn from `seed`.
pub fn vae_elbo(model: &VaeModel, batch: &[TaggedSentence], step: usize, total_steps: usize, seed: u64) -> Result<Elbo> {
    if batch.is_empty() {
        return Err(Error::Empty("VAE batch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = beta(step, total_steps, model.config.warmup_fraction);
    let mut e = Elbo {
        loss: 0.0,
        recon: 0.0,
        kl: 0.0,
    };
    for s in batch {
        let (w, t) = model.encode_sentence(s);
        let eps = model.draw(&mut rng);
        let mut g = Graph::inference();
        let (l, r, k) = model.net.loss(&mut g, &model.store, &w, &t, &eps, b);
        e.loss += g.value(l).data()[0];
        e.recon += g.value(r).data()[0];
        e.kl += g.value(k).data()[0];
    }
    if !e.loss.is_finite() {
        return Err(Error::NonFinite("ELBO".into()));
    }
    Ok(e)
}

/// `n` sentences decoded from prior draws, sampling words from the decoder.
pub fn vae_generate(model: &VaeModel, n: usize, seed: u64) -> Result<Vec<TaggedSentence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z = model.draw(&mut rng);
            model.decode(&z, Some(&mut rng))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn corpus(lines: &[&str]) -> Vec<TaggedSentence> {
        lines
            .iter()
            .map(|l| {
                TaggedSentence::new(
                    l.split_whitespace()
                        .map(|w| match w.strip_prefix('*') {
                            Some(x) => TaggedToken::new(x, Lang::L2),
                            None => TaggedToken::new(w, Lang::L1),
                        })
                        .collect(),
                    None,
                )
                .unwrap()
            })
            .collect()
    }

    fn small() -> VaeConfig {
        VaeConfig {
            emb_dim: 4,
            tag_dim: 2,
            hidden: 5,
            latent: 3,
            ..Default::default()
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(gaussian_kl(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((gaussian_kl(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn beta_endpoints() {
        assert_eq!(beta(0, 100, 0.5), 0.0);
        assert_eq!(beta(100, 100, 0.5), 1.0);
        assert_eq!(beta(25, 100, 0.5), 0.5);
        assert_eq!(beta(70, 100, 0.5), 1.0);
    }

    #[test]
    fn beta_zero_loss_is_reconstruction() {
        let c = corpus(&["i *kharidte the book", "we see the *kitab"]);
        let m = VaeModel::new(small(), &c, 1).unwrap();
        let e = vae_elbo(&m, &c, 0, 10, 3).unwrap();
        assert_eq!(e.loss, e.recon);
        assert!(e.kl >= 0.0);
        let e1 = vae_elbo(&m, &c, 10, 10, 3).unwrap();
        assert!(e1.loss >= e1.recon);
    }

    #[test]
    fn elbo_passes_grad_check() {
        let c = corpus(&["i *kharidte the book"]);
        let mut m = VaeModel::new(small(), &c, 2).unwrap();
        let (w, t) = m.encode_sentence(&c[0]);
        let eps = Tensor::row_vector(vec![0.3, -1.1, 0.7]);
        let net = m.net;
        let r = grad_check(&mut m.store, 1e-5, |s, g| Ok(net.loss(g, s, &w, &t, &eps, 0.6).0)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn generation_contract() {
        let c = corpus(&["i *kharidte the book", "we see the *kitab today"]);
        let m = VaeModel::new(small(), &c, 4).unwrap();
        assert!(vae_generate(&m, 0, 1).unwrap().is_empty());
        let a = vae_generate(&m, 5, 9).unwrap();
        assert_eq!(a, vae_generate(&m, 5, 9).unwrap());
        for s in &a {
            assert!(s.len() <= 30);
            assert!(s.tokens.iter().all(|t| m.vocab.id(&t.word).is_some_and(|id| id >= RESERVED.len())));
        }
    }
}
