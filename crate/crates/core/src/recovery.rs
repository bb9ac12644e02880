//! Monolingual recovery by masked prediction.
//!
//! Every word not in the target language is replaced by `[MASK]` pieces and
//! a bidirectional transformer LM fills each masked word back in. Training
//! masks whole words, either in target-language text alone or in a CS
//! sentence concatenated (after one `[PAD]`) with its monolingual reference.

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{positional_encoding, EncoderLayer, PositionalEncoding};
use crate::error::{Error, Result};
use crate::numerics::{fit, Embedding, FitConfig, Graph, ParamId, ParamStore, Tensor, Var, IGNORE};
use crate::tokenizer::{casefold, detokenize, tokenize, Lang, TaggedSentence, TaggedToken, Vocab, CONTINUATION, MASK, PAD, RESERVED};

/// Surface form of a slot filled with padding.
pub const PAD_WORD: &str = RESERVED[PAD];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedInput {
    pub ids: Vec<usize>,
    /// `(first position, piece count)` of every masked word, in order.
    pub mask_slots: Vec<(usize, usize)>,
    /// Word index of each slot.
    pub slot_words: Vec<usize>,
    /// Every word was foreign.
    pub fully_masked: bool,
}

/// Tokenizes `s`, replacing all pieces of each word not tagged `target` with `[MASK]`.
pub fn mask_foreign(s: &TaggedSentence, target: Lang, v: &Vocab) -> MaskedInput {
    let mut out = MaskedInput {
        ids: Vec::new(),
        mask_slots: Vec::new(),
        slot_words: Vec::new(),
        fully_masked: false,
    };
    for (w, tok) in s.tokens.iter().enumerate() {
        let pieces = tokenize(&tok.word, v);
        if tok.lang == target {
            out.ids.extend(pieces);
        } else {
            out.mask_slots.push((out.ids.len(), pieces.len()));
            out.slot_words.push(w);
            out.ids.extend(std::iter::repeat(MASK).take(pieces.len()));
        }
    }
    out.fully_masked = out.slot_words.len() == s.len();
    if out.fully_masked {
        warn!("sentence {:?} is entirely foreign; every word is masked", s.text());
    }
    out
}

/// Aligns predictions to slots: missing tail slots get [`PAD_WORD`], extra
/// predictions are dropped with a warning.
pub fn pad_fill(predicted: Vec<String>, slots: usize) -> Vec<String> {
    let mut p = predicted;
    if p.len() > slots {
        warn!("{} predictions for {slots} slots; truncating", p.len());
        p.truncate(slots);
    }
    p.resize(slots, PAD_WORD.to_string());
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MlmMode {
    /// Mask words of target-language text (the monolingual references).
    #[default]
    Unsupervised,
    /// Mask words of `CS [PAD] reference` sequences in both halves.
    SupervisedPaired,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RecoveryConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub mask_rate: f64,
    pub mode: MlmMode,
}

impl RecoveryConfig {
    pub fn toy() -> Self {
        Self {
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            max_len: 128,
            mask_rate: 0.15,
            mode: MlmMode::Unsupervised,
        }
    }

    pub fn paper() -> Self {
        Self {
            layers: 12,
            d_model: 768,
            heads: 12,
            d_ff: 3072,
            max_len: 512,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.layers, self.d_model, self.heads, self.d_ff, self.max_len].contains(&0) {
            return Err(Error::InvalidArgument("recovery LM sizes must be positive".into()));
        }
        if self.d_model % self.heads != 0 || self.d_model % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} must be even and divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::InvalidArgument(format!("mask_rate {} outside [0, 1]", self.mask_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoveryNet {
    /// Input embeddings, reused transposed as the output projection.
    pub embed: Embedding,
    pub layers: Vec<EncoderLayer>,
    pub out_bias: ParamId,
}

impl RecoveryNet {
    pub fn new(store: &mut ParamStore, cfg: &RecoveryConfig, vocab: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            embed: Embedding::new(store, "mlm.embed", vocab, cfg.d_model, rng),
            layers: (0..cfg.layers)
                .map(|l| EncoderLayer::new(store, &format!("mlm.layer{l}"), cfg.d_model, cfg.heads, cfg.d_ff, rng))
                .collect::<Result<_>>()?,
            out_bias: store.add_filled("mlm.out_bias", 1, vocab, 0.0),
        })
    }

    /// `n×V` logits over pieces for every input position.
    pub fn logits(&self, g: &mut Graph, s: &ParamStore, ids: &[usize], pe: &PositionalEncoding) -> Var {
        let x = self.embed.lookup(g, s, ids);
        let p = g.constant(pe.prefix(ids.len()).expect("length checked by caller"));
        let mut x = g.add(x, p);
        for layer in &self.layers {
            x = layer.forward(g, s, x, None);
        }
        let e = g.param(s, self.embed.table);
        let z = g.matmul_nt(x, e);
        let b = g.param(s, self.out_bias);
        g.add_row(z, b)
    }

    /// Summed cross-entropy over positions whose target is not [`IGNORE`].
    pub fn loss(&self, g: &mut Graph, s: &ParamStore, ids: &[usize], targets: &[usize], pe: &PositionalEncoding) -> Var {
        let z = self.logits(g, s, ids, pe);
        g.cross_entropy(z, targets)
    }
}

/// A training sequence with whole-word masks applied.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlmExample {
    pub ids: Vec<usize>,
    /// Original piece at masked positions, [`IGNORE`] elsewhere.
    pub targets: Vec<usize>,
}

impl MlmExample {
    pub fn masked_count(&self) -> usize {
        self.targets.iter().filter(|&&t| t != IGNORE).count()
    }
}

/// Number of words masked out of `n` at `rate`: `round(rate·n)`, at least one when `rate > 0`.
pub fn masked_word_count(n: usize, rate: f64) -> usize {
    if rate <= 0.0 || n == 0 {
        return 0;
    }
    ((rate * n as f64).round() as usize).clamp(1, n)
}

/// Masks `round(rate·n)` whole words (at least one when `rate > 0`) of the
/// tokenized words `words`, appending to `ex`.
fn mask_words(words: &[Vec<usize>], rate: f64, rng: &mut impl Rng, ex: &mut MlmExample) {
    let k = masked_word_count(words.len(), rate);
    let chosen: HashSet<usize> = sample(rng, words.len(), k).into_iter().collect();
    for (i, pieces) in words.iter().enumerate() {
        for &p in pieces {
            if chosen.contains(&i) {
                ex.ids.push(MASK);
                ex.targets.push(p);
            } else {
                ex.ids.push(p);
                ex.targets.push(IGNORE);
            }
        }
    }
}

fn tokenize_words<S: AsRef<str>>(words: &[S], v: &Vocab) -> Vec<Vec<usize>> {
    words.iter().map(|w| tokenize(w.as_ref(), v)).collect()
}

#[derive(Debug, Clone)]
pub struct RecoveryLm {
    pub config: RecoveryConfig,
    pub vocab: Vocab,
    pub net: RecoveryNet,
    pub store: ParamStore,
    pe: PositionalEncoding,
}

impl RecoveryLm {
    pub fn new(config: RecoveryConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = RecoveryNet::new(&mut store, &config, vocab.len(), &mut rng)?;
        let pe = positional_encoding(config.max_len, config.d_model)?;
        Ok(Self {
            config,
            vocab,
            net,
            store,
            pe,
        })
    }

    pub fn positional_encoding(&self) -> &PositionalEncoding {
        &self.pe
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Empty("piece sequence".into()));
        }
        if n > self.config.max_len {
            return Err(Error::InvalidArgument(format!(
                "{n} pieces exceed the LM's max_len {}",
                self.config.max_len
            )));
        }
        Ok(())
    }

    /// One masked training example from `s` under `mode`.
    pub fn make_example(&self, s: &TaggedSentence, mode: MlmMode, rate: f64, rng: &mut impl Rng) -> Result<MlmExample> {
        let mut ex = MlmExample {
            ids: Vec::new(),
            targets: Vec::new(),
        };
        match mode {
            MlmMode::Unsupervised => {
                let words: Vec<&str> = match &s.mono_ref {
                    Some(r) => r.iter().map(String::as_str).collect(),
                    None => s.words(),
                };
                mask_words(&tokenize_words(&words, &self.vocab), rate, rng, &mut ex);
            }
            MlmMode::SupervisedPaired => {
                let r = s
                    .mono_ref
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument(format!("sentence {:?} has no monolingual reference", s.text())))?;
                mask_words(&tokenize_words(&s.words(), &self.vocab), rate, rng, &mut ex);
                ex.ids.push(PAD);
                ex.targets.push(IGNORE);
                mask_words(&tokenize_words(r, &self.vocab), rate, rng, &mut ex);
            }
        }
        self.check_len(ex.ids.len())?;
        Ok(ex)
    }

    /// Loss on the masked positions of `ex`; 0 when nothing is masked.
    pub fn example_loss(&self, ex: &MlmExample) -> Result<f64> {
        if ex.masked_count() == 0 {
            return Ok(0.0);
        }
        self.check_len(ex.ids.len())?;
        let mut g = Graph::inference();
        let l = self.net.loss(&mut g, &self.store, &ex.ids, &ex.targets, &self.pe);
        Ok(g.value(l).data()[0])
    }

    /// `n×V` logits for a piece sequence.
    pub fn logits(&self, ids: &[usize]) -> Result<Tensor> {
        self.check_len(ids.len())?;
        let mut g = Graph::inference();
        let z = self.net.logits(&mut g, &self.store, ids, &self.pe);
        Ok(g.value(z).clone())
    }

    /// Fresh random masks every step; the loss curve is the mean per sentence.
    pub fn train(&mut self, corpus: &[TaggedSentence], cfg: FitConfig) -> Result<Vec<f64>> {
        if corpus.is_empty() {
            return Err(Error::Empty("MLM corpus".into()));
        }
        let mode = self.config.mode;
        if mode == MlmMode::SupervisedPaired {
            if let Some(s) = corpus.iter().find(|s| s.mono_ref.is_none()) {
                return Err(Error::InvalidArgument(format!(
                    "supervised pairing needs references; {:?} has none",
                    s.text()
                )));
            }
        }
        let rate = self.config.mask_rate;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6d6c6d);
        let v = &self.vocab;
        let words: Vec<(Vec<Vec<usize>>, Option<Vec<Vec<usize>>>)> = corpus
            .iter()
            .map(|s| match mode {
                MlmMode::Unsupervised => match &s.mono_ref {
                    Some(r) => (tokenize_words(r, v), None),
                    None => (tokenize_words(&s.words(), v), None),
                },
                MlmMode::SupervisedPaired => (
                    tokenize_words(&s.words(), v),
                    s.mono_ref.as_ref().map(|r| tokenize_words(r, v)),
                ),
            })
            .collect();
        if let Some(n) = words.iter().map(|(a, b)| a.iter().chain(b.iter().flatten()).map(Vec::len).sum::<usize>() + usize::from(b.is_some())).max() {
            self.check_len(n)?;
        }
        let net = &self.net;
        let pe = &self.pe;
        fit(&mut self.store, corpus.len(), cfg, |s, i, g| {
            let mut ex = MlmExample {
                ids: Vec::new(),
                targets: Vec::new(),
            };
            let (first, second) = &words[i];
            mask_words(first, rate, &mut rng, &mut ex);
            if let Some(second) = second {
                ex.ids.push(PAD);
                ex.targets.push(IGNORE);
                mask_words(second, rate, &mut rng, &mut ex);
            }
            if ex.masked_count() == 0 {
                return Ok(None);
            }
            Ok(Some(net.loss(g, s, &ex.ids, &ex.targets, pe)))
        })
    }

    /// One word per mask slot from the argmax piece at each of the slot's
    /// positions (ties to the lowest id): the first piece, extended by the
    /// `##` continuations that directly follow it. A slot starting with
    /// `[PAD]` yields [`PAD_WORD`].
    pub fn predict_masks(&self, input: &MaskedInput) -> Result<Vec<String>> {
        if input.mask_slots.is_empty() {
            return Err(Error::InvalidArgument("no mask slots to predict".into()));
        }
        let z = self.logits(&input.ids)?;
        let mut out = Vec::with_capacity(input.mask_slots.len());
        for &(start, count) in &input.mask_slots {
            let ids: Vec<usize> = (start..start + count).map(|p| best_piece(z.row(p))).collect();
            out.push(join_slot(&ids, &self.vocab));
        }
        Ok(out)
    }

    /// Replaces every word not tagged `target` by its prediction; other words
    /// pass through unchanged.
    pub fn recover(&self, s: &TaggedSentence, target: Lang) -> Result<Vec<String>> {
        let input = mask_foreign(s, target, &self.vocab);
        let mut words: Vec<String> = s.tokens.iter().map(|t| t.word.clone()).collect();
        if input.mask_slots.is_empty() {
            return Ok(words);
        }
        let predicted = pad_fill(self.predict_masks(&input)?, input.mask_slots.len());
        for (&w, p) in input.slot_words.iter().zip(predicted) {
            words[w] = p;
        }
        Ok(words)
    }
}

fn join_slot(ids: &[usize], v: &Vocab) -> String {
    let Some((&first, rest)) = ids.split_first() else {
        return PAD_WORD.to_string();
    };
    if first == PAD {
        return PAD_WORD.to_string();
    }
    let n = 1 + rest.iter().take_while(|&&i| v.piece(i).starts_with(CONTINUATION)).count();
    detokenize(&ids[..n], v)
}

/// Argmax over real pieces and `[PAD]`; the other reserved ids are never predicted.
fn best_piece(row: &[f64]) -> usize {
    let mut best = PAD;
    for (id, &x) in row.iter().enumerate().skip(RESERVED.len()) {
        if x > row[best] {
            best = id;
        }
    }
    best
}

/// Tags words by membership in the target-language vocabulary; anything
/// unknown is treated as foreign. Used when language tags are unavailable,
/// as for ASR output.
#[derive(Debug, Clone, Default)]
pub struct LanguageTagger {
    target_words: HashSet<String>,
    target: Option<Lang>,
}

impl LanguageTagger {
    pub fn new<'a>(target: Lang, words: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            target_words: words.into_iter().map(casefold).collect(),
            target: Some(target),
        }
    }

    pub fn tag(&self, words: &[&str]) -> Result<TaggedSentence> {
        let target = self.target.unwrap_or(Lang::L1);
        let other = match target {
            Lang::L1 => Lang::L2,
            Lang::L2 => Lang::L1,
        };
        let toks = words
            .iter()
            .map(|w| {
                let l = if self.target_words.contains(&casefold(w)) { target } else { other };
                TaggedToken::new(*w, l)
            })
            .collect();
        TaggedSentence::new(toks, None)
    }
}

#[derive(Serialize)]
struct RecoveryRecord<'a> {
    input: Vec<&'a str>,
    recovered: &'a [String],
}

/// Writes one `{"input": [...], "recovered": [...]}` object per line.
pub fn write_recoveries(path: &Path, rows: &[(TaggedSentence, Vec<String>)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for (s, r) in rows {
        let line = serde_json::to_string(&RecoveryRecord {
            input: s.words(),
            recovered: r,
        })?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use crate::tokenizer::build_vocab;

    fn sent(words: &[(&str, Lang)]) -> TaggedSentence {
        TaggedSentence::new(words.iter().map(|(w, l)| TaggedToken::new(*w, *l)).collect(), None).unwrap()
    }

    fn vocab() -> Vocab {
        let s = TaggedSentence::monolingual(&["the", "cat", "sat", "the", "cat", "sat", "kitab"], Lang::L1).unwrap();
        build_vocab(&[s], 40).unwrap()
    }

    #[test]
    fn masking_rules() {
        let v = vocab();
        let s = sent(&[("the", Lang::L1), ("cat", Lang::L1)]);
        let m = mask_foreign(&s, Lang::L1, &v);
        assert!(m.mask_slots.is_empty());
        assert_eq!(m.ids, [tokenize("the", &v), tokenize("cat", &v)].concat());

        let s = sent(&[("kitab", Lang::L2), ("the", Lang::L1), ("cat", Lang::L1), ("ghar", Lang::L2)]);
        let m = mask_foreign(&s, Lang::L1, &v);
        assert_eq!(m.slot_words, vec![0, 3]);
        assert!(!m.fully_masked);
        for &(p, n) in &m.mask_slots {
            assert!(m.ids[p..p + n].iter().all(|&i| i == MASK));
        }
        assert_eq!(m.mask_slots[0], (0, tokenize("kitab", &v).len()));

        let v = Vocab::from_words(["the", "kit", "##ab"]);
        let s = sent(&[("the", Lang::L1), ("kitab", Lang::L2)]);
        let m = mask_foreign(&s, Lang::L1, &v);
        assert_eq!(m.mask_slots, vec![(1, 2)]);
        assert_eq!(m.ids[1..], [MASK, MASK]);

        let s = sent(&[("ghar", Lang::L2)]);
        assert!(mask_foreign(&s, Lang::L1, &v).fully_masked);
    }

    #[test]
    fn pad_fill_rules() {
        let w = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(pad_fill(w(&["a", "b"]), 2), w(&["a", "b"]));
        assert_eq!(pad_fill(w(&["a", "b"]), 3), w(&["a", "b", PAD_WORD]));
        assert_eq!(pad_fill(vec![], 2), w(&[PAD_WORD, PAD_WORD]));
        assert_eq!(pad_fill(w(&["a", "b", "c"]), 2), w(&["a", "b"]));
    }

    #[test]
    fn slot_joining() {
        let v = Vocab::from_words(["the", "kit", "##ab", "##x"]);
        let id = |p: &str| v.id(p).unwrap();
        assert_eq!(join_slot(&[id("kit"), id("##ab")], &v), "kitab");
        assert_eq!(join_slot(&[id("kit"), id("the"), id("##ab")], &v), "kit");
        assert_eq!(join_slot(&[PAD, id("the")], &v), PAD_WORD);
    }

    #[test]
    fn argmax_ties_go_to_lowest_piece() {
        let mut row = vec![9.0; 10];
        row[MASK] = 100.0;
        assert_eq!(best_piece(&row), PAD);
        row[PAD] = 0.0;
        assert_eq!(best_piece(&row), RESERVED.len());
    }

    fn tiny_lm(v: Vocab) -> RecoveryLm {
        let cfg = RecoveryConfig {
            layers: 1,
            d_model: 4,
            heads: 2,
            d_ff: 6,
            max_len: 16,
            mask_rate: 0.15,
            mode: MlmMode::Unsupervised,
        };
        RecoveryLm::new(cfg, v, 3).unwrap()
    }

    #[test]
    fn zero_rate_gives_zero_loss_and_no_slots_is_an_error() {
        let lm = tiny_lm(vocab());
        let s = TaggedSentence::monolingual(&["the", "cat", "sat"], Lang::L1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ex = lm.make_example(&s, MlmMode::Unsupervised, 0.0, &mut rng).unwrap();
        assert_eq!(ex.masked_count(), 0);
        assert_eq!(lm.example_loss(&ex).unwrap(), 0.0);
        let ex = lm.make_example(&s, MlmMode::Unsupervised, 0.15, &mut rng).unwrap();
        assert!(ex.masked_count() >= 1);
        let input = mask_foreign(&s, Lang::L1, &lm.vocab);
        assert!(lm.predict_masks(&input).is_err());
        assert_eq!(lm.recover(&s, Lang::L1).unwrap(), vec!["the", "cat", "sat"]);
    }

    #[test]
    fn paired_examples_concatenate_with_pad() {
        let lm = tiny_lm(vocab());
        let s = TaggedSentence::new(
            vec![TaggedToken::new("the", Lang::L1), TaggedToken::new("kitab", Lang::L2)],
            Some(vec!["the".into(), "cat".into()]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ex = lm.make_example(&s, MlmMode::SupervisedPaired, 0.15, &mut rng).unwrap();
        let cs_len = 1 + tokenize("kitab", &lm.vocab).len();
        assert_eq!(ex.ids[cs_len], PAD);
        assert_eq!(ex.ids.len(), cs_len + 3);
        // At least one word masked in each half.
        assert!(ex.targets[..cs_len].iter().any(|&t| t != IGNORE));
        assert!(ex.targets[cs_len + 1..].iter().any(|&t| t != IGNORE));
        let plain = TaggedSentence::monolingual(&["the"], Lang::L1).unwrap();
        assert!(lm.make_example(&plain, MlmMode::SupervisedPaired, 0.15, &mut rng).is_err());
    }

    /// Masked-position loss against cross-entropy written out by hand from the logits.
    #[test]
    fn loss_matches_straight_line_oracle() {
        let lm = tiny_lm(vocab());
        let s = TaggedSentence::monolingual(&["the", "cat", "sat", "the"], Lang::L1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ex = lm.make_example(&s, MlmMode::Unsupervised, 0.5, &mut rng).unwrap();
        let z = lm.logits(&ex.ids).unwrap();
        let mut oracle = 0.0;
        for (r, &t) in ex.targets.iter().enumerate() {
            if t == IGNORE {
                continue;
            }
            let row = z.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            oracle += lse - row[t];
        }
        assert!((lm.example_loss(&ex).unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn mlm_gradients() {
        let mut lm = tiny_lm(vocab());
        let s = TaggedSentence::monolingual(&["the", "cat", "sat"], Lang::L1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ex = lm.make_example(&s, MlmMode::Unsupervised, 0.4, &mut rng).unwrap();
        let net = lm.net.clone();
        let pe = lm.pe.clone();
        let r = grad_check(&mut lm.store, 1e-5, |st, g| Ok(net.loss(g, st, &ex.ids, &ex.targets, &pe))).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn overfit_recovers_masked_word() {
        let v = vocab();
        let cfg = RecoveryConfig {
            layers: 1,
            d_model: 16,
            heads: 2,
            d_ff: 32,
            max_len: 16,
            mask_rate: 0.34,
            mode: MlmMode::Unsupervised,
        };
        let mut lm = RecoveryLm::new(cfg, v, 5).unwrap();
        let s = TaggedSentence::monolingual(&["the", "cat", "sat"], Lang::L1).unwrap();
        let fit_cfg = FitConfig {
            steps: 300,
            batch: 1,
            lr: 0.01,
            seed: 1,
        };
        lm.train(&[s], fit_cfg).unwrap();
        let cs = sent(&[("the", Lang::L1), ("billi", Lang::L2), ("sat", Lang::L1)]);
        assert_eq!(lm.recover(&cs, Lang::L1).unwrap(), vec!["the", "cat", "sat"]);
    }

    #[test]
    fn tagger_marks_unknown_words_foreign() {
        let t = LanguageTagger::new(Lang::L1, ["the", "cat"]);
        let s = t.tag(&["The", "kitab", "cat"]).unwrap();
        assert_eq!(s.langs(), vec![Lang::L1, Lang::L2, Lang::L1]);
    }

    #[test]
    fn recovery_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let s = sent(&[("the", Lang::L1), ("billi", Lang::L2)]);
        write_recoveries(&p, &[(s, vec!["the".into(), "cat".into()])]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "{\"input\":[\"the\",\"billi\"],\"recovered\":[\"the\",\"cat\"]}\n");
    }
}
