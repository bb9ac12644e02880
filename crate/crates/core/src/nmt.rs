//! Word-level attention seq2seq from code-switched to monolingual text.
//!
//! Encoder: stacked BiLSTM over source word embeddings. Decoder step, with the
//! previous context fed back as input:
//!
//! ```text
//! sᵢ = LSTM([emb(yᵢ₋₁); Cᵢ₋₁], sᵢ₋₁)
//! Cᵢ = attend(score(sᵢ, H), H)      dot: s·h   matrix: sᵀ W_a h   none: Cᵢ = summary(H)
//! P(yᵢ) = softmax(MLP([sᵢ; Cᵢ]))     over the target vocabulary only
//! ```
//!
//! `s₀ = tanh(W·summary(H) + b)` and `C₀ = summary(H)` for every kind, so the
//! no-attention baseline is the attention model with the lookup removed.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{attend_graph, dot_scores, matrix_scores};
use crate::error::{Error, Result};
use crate::numerics::{fit, BiLstmStack, Embedding, FitConfig, Graph, Linear, Lstm, Mlp, ParamId, ParamStore, Tensor, Var};
use crate::tokenizer::{casefold, TaggedSentence, Vocab, BOS, EOS, MASK, PAD, RESERVED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    #[default]
    Dot,
    Matrix,
    /// Baseline: the encoder summary is the context at every step.
    None,
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dot => "dot",
            Self::Matrix => "matrix",
            Self::None => "none",
        })
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dot" => Ok(Self::Dot),
            "matrix" => Ok(Self::Matrix),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidArgument(format!("unknown attention kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NmtConfig {
    pub emb_dim: usize,
    /// Per direction; the encoder state width is twice this.
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub dec_hidden: usize,
    pub mlp_hidden: usize,
    pub attention: AttentionKind,
}

impl NmtConfig {
    pub fn toy(attention: AttentionKind) -> Self {
        Self {
            emb_dim: 32,
            enc_hidden: 32,
            enc_layers: 2,
            dec_hidden: 64,
            mlp_hidden: 64,
            attention,
        }
    }

    pub fn paper(attention: AttentionKind) -> Self {
        Self {
            emb_dim: 128,
            enc_hidden: 128,
            enc_layers: 2,
            dec_hidden: 256,
            mlp_hidden: 256,
            attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.emb_dim, self.enc_hidden, self.enc_layers, self.dec_hidden, self.mlp_hidden].contains(&0) {
            return Err(Error::InvalidArgument("NMT sizes must be positive".into()));
        }
        if self.attention == AttentionKind::Dot && self.dec_hidden != 2 * self.enc_hidden {
            return Err(Error::InvalidArgument(format!(
                "dot attention needs dec_hidden ({}) == 2·enc_hidden ({})",
                self.dec_hidden,
                2 * self.enc_hidden
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NmtNet {
    pub src_embed: Embedding,
    pub encoder: BiLstmStack,
    /// `W_a`, present for matrix attention only.
    pub w_a: Option<ParamId>,
    /// `s₀ = tanh(W·summary + b)`.
    pub bridge: Linear,
    pub tgt_embed: Embedding,
    pub decoder: Lstm,
    pub output: Mlp,
    pub attention: AttentionKind,
}

impl NmtNet {
    pub fn new(store: &mut ParamStore, cfg: &NmtConfig, src: usize, tgt: usize, rng: &mut impl Rng) -> Self {
        let enc = 2 * cfg.enc_hidden;
        Self {
            src_embed: Embedding::new(store, "nmt.src_embed", src, cfg.emb_dim, rng),
            encoder: BiLstmStack::new(store, "nmt.encoder", cfg.emb_dim, cfg.enc_hidden, cfg.enc_layers, rng),
            w_a: (cfg.attention == AttentionKind::Matrix).then(|| store.add_uniform("nmt.w_a", cfg.dec_hidden, enc, enc, rng)),
            bridge: Linear::new(store, "nmt.bridge", enc, cfg.dec_hidden, rng),
            tgt_embed: Embedding::new(store, "nmt.tgt_embed", tgt, cfg.emb_dim, rng),
            decoder: Lstm::new(store, "nmt.decoder", cfg.emb_dim + enc, cfg.dec_hidden, rng),
            output: Mlp::new(store, "nmt.output", cfg.dec_hidden + enc, cfg.mlp_hidden, tgt, rng),
            attention: cfg.attention,
        }
    }

    /// Encoder states and their summary row.
    pub fn encode(&self, g: &mut Graph, s: &ParamStore, src: &[usize]) -> (Var, Var) {
        let x = self.src_embed.lookup(g, s, src);
        let h = self.encoder.run(g, s, x);
        let summary = self.encoder.summary(g, h);
        (h, summary)
    }

    /// Decoder state and fed-back context before the first word.
    pub fn initial_state(&self, g: &mut Graph, s: &ParamStore, summary: Var) -> DecoderState {
        let h = self.bridge.forward(g, s, summary);
        let h = g.tanh(h);
        let c = g.constant(Tensor::zeros(&[1, self.decoder.hidden]));
        DecoderState { h, c, ctx: summary }
    }

    fn context(&self, g: &mut Graph, s: &ParamStore, (h, summary): (Var, Var), query: Var) -> Var {
        match self.attention {
            AttentionKind::None => summary,
            AttentionKind::Dot => {
                let sc = dot_scores(g, query, h);
                attend_graph(g, sc, h).1
            }
            AttentionKind::Matrix => {
                let w = g.param(s, self.w_a.expect("matrix attention has W_a"));
                let sc = matrix_scores(g, query, h, w);
                attend_graph(g, sc, h).1
            }
        }
    }

    /// One decoder step; returns the new state and the logits.
    pub fn step(&self, g: &mut Graph, s: &ParamStore, enc: (Var, Var), state: DecoderState, prev: usize) -> (DecoderState, Var) {
        let e = self.tgt_embed.lookup(g, s, &[prev]);
        let x = g.concat_cols(&[e, state.ctx]);
        let (h, c) = self.decoder.step(g, s, x, (state.h, state.c));
        let ctx = self.context(g, s, enc, h);
        let o = g.concat_cols(&[h, ctx]);
        (DecoderState { h, c, ctx }, self.output.forward(g, s, o))
    }

    /// Teacher-forced summed cross-entropy of `tgt` followed by `EOS`.
    pub fn loss(&self, g: &mut Graph, s: &ParamStore, src: &[usize], tgt: &[usize]) -> Var {
        let enc = self.encode(g, s, src);
        let mut state = self.initial_state(g, s, enc.1);
        let mut targets = tgt.to_vec();
        targets.push(EOS);
        let mut prev = BOS;
        let mut rows = Vec::with_capacity(targets.len());
        for &y in &targets {
            let (next, logits) = self.step(g, s, enc, state, prev);
            rows.push(logits);
            state = next;
            prev = y;
        }
        let logits = g.concat_rows(&rows);
        g.cross_entropy(logits, &targets)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    /// Context of the previous step, fed into the next LSTM input.
    pub ctx: Var,
}

#[derive(Debug, Clone)]
pub struct NmtModel {
    pub config: NmtConfig,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub net: NmtNet,
    pub store: ParamStore,
}

fn require_refs(corpus: &[TaggedSentence]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Empty("NMT corpus".into()));
    }
    match corpus.iter().find(|s| s.mono_ref.is_none()) {
        Some(s) => Err(Error::InvalidArgument(format!("sentence {:?} has no monolingual reference", s.text()))),
        None => Ok(()),
    }
}

impl NmtModel {
    /// Builds word vocabularies from `corpus` (sources from the CS words,
    /// targets from the references) and initialises the network.
    pub fn new(config: NmtConfig, corpus: &[TaggedSentence], seed: u64) -> Result<Self> {
        require_refs(corpus)?;
        let src: Vec<String> = corpus.iter().flat_map(|s| s.tokens.iter().map(|t| casefold(&t.word))).collect();
        let tgt: Vec<String> = corpus.iter().flat_map(|s| s.mono_ref.iter().flatten().map(|w| casefold(w))).collect();
        let src_vocab = Vocab::from_words(src.iter().map(String::as_str));
        let tgt_vocab = Vocab::from_words(tgt.iter().map(String::as_str));
        Self::with_vocabs(config, src_vocab, tgt_vocab, seed)
    }

    pub fn with_vocabs(config: NmtConfig, src_vocab: Vocab, tgt_vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = NmtNet::new(&mut store, &config, src_vocab.len(), tgt_vocab.len(), &mut rng);
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            net,
            store,
        })
    }

    pub fn encode_source<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.src_vocab.word_id(&casefold(w.as_ref()))).collect()
    }

    pub fn encode_target<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.tgt_vocab.word_id(&casefold(w.as_ref()))).collect()
    }

    fn pair(&self, s: &TaggedSentence) -> Result<(Vec<usize>, Vec<usize>)> {
        let r = s
            .mono_ref
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("sentence {:?} has no monolingual reference", s.text())))?;
        Ok((self.encode_source(&s.words()), self.encode_target(r)))
    }

    /// Summed cross-entropy of one sentence pair under the current parameters.
    pub fn sentence_loss(&self, s: &TaggedSentence) -> Result<(f64, usize)> {
        let (src, tgt) = self.pair(s)?;
        let mut g = Graph::inference();
        let l = self.net.loss(&mut g, &self.store, &src, &tgt);
        Ok((g.value(l).data()[0], tgt.len() + 1))
    }

    pub fn train(&mut self, corpus: &[TaggedSentence], cfg: FitConfig) -> Result<Vec<f64>> {
        require_refs(corpus)?;
        let data: Vec<(Vec<usize>, Vec<usize>)> = corpus.iter().map(|s| self.pair(s)).collect::<Result<_>>()?;
        let net = &self.net;
        fit(&mut self.store, data.len(), cfg, |s, i, g| Ok(Some(net.loss(g, s, &data[i].0, &data[i].1))))
    }

    /// Greedy decoding from `BOS` until `EOS` or `max_len` words.
    pub fn translate<S: AsRef<str>>(&self, words: &[S], max_len: usize) -> Result<Vec<String>> {
        if max_len == 0 {
            return Ok(Vec::new());
        }
        if words.is_empty() {
            return Err(Error::Empty("source sentence".into()));
        }
        let src = self.encode_source(words);
        let mut g = Graph::inference();
        let s = &self.store;
        let enc = self.net.encode(&mut g, s, &src);
        let mut state = self.net.initial_state(&mut g, s, enc.1);
        let mut prev = BOS;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (next, logits) = self.net.step(&mut g, s, enc, state, prev);
            let k = best_word(g.value(logits).data());
            if k == EOS {
                break;
            }
            out.push(self.tgt_vocab.piece(k).to_string());
            state = next;
            prev = k;
        }
        Ok(out)
    }

    pub fn translate_sentence(&self, s: &TaggedSentence, max_len: usize) -> Result<Vec<String>> {
        self.translate(&s.words(), max_len)
    }
}

/// Argmax excluding `PAD`, `MASK` and `BOS`; ties go to the lowest id.
fn best_word(logits: &[f64]) -> usize {
    let banned = [PAD, MASK, BOS];
    let mut best = None;
    for (i, &x) in logits.iter().enumerate() {
        if banned.contains(&i) {
            continue;
        }
        match best {
            Some((_, y)) if y >= x => {}
            _ => best = Some((i, x)),
        }
    }
    best.map_or(RESERVED.len(), |(i, _)| i)
}

#[derive(Serialize)]
struct TranslationRecord<'a> {
    input: Vec<&'a str>,
    translation: &'a [String],
}

/// Writes one `{"input": [...], "translation": [...]}` object per line.
pub fn write_translations(path: &Path, rows: &[(TaggedSentence, Vec<String>)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (s, t) in rows {
        let line = serde_json::to_string(&TranslationRecord {
            input: s.words(),
            translation: t,
        })?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

/// Copies `W_a = I` into a matrix-attention model; used to compare scorers.
pub fn set_identity_scorer(model: &mut NmtModel) -> Result<()> {
    let id = model.net.w_a.ok_or_else(|| Error::InvalidArgument("model has no W_a".into()))?;
    let (r, c) = (model.store.value(id).rows(), model.store.value(id).cols());
    if r != c {
        return Err(Error::Shape(format!("W_a is {r}×{c}, not square")));
    }
    *model.store.value_mut(id) = Tensor::identity(r);
    Ok(())
}
