//! Synthetic code-switched corpora: a template grammar for monolingual
//! sentences, lexicon-driven word switching, fuzzy top-k filtering, and a
//! sentence VAE over tagged tokens.

pub mod vae;

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{casefold, Lang, TaggedSentence, TaggedToken};

pub use vae::{beta, gaussian_kl, vae_elbo, vae_generate, Elbo, VaeConfig, VaeModel};

/// Lexicon bundled with the repository.
pub const DEFAULT_LEXICON: &str = include_str!("../../../../data/lexicon.tsv");

/// L1 word → L2 translations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualLexicon {
    entries: HashMap<String, Vec<String>>,
    order: Vec<String>,
    counts: HashMap<String, usize>,
}

impl BilingualLexicon {
    /// Parses `L1<TAB>L2a|L2b` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self {
            entries: HashMap::new(),
            order: Vec::new(),
            counts: HashMap::new(),
        };
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| Error::InvalidArgument(format!("lexicon line {}: {msg}", n + 1));
            let (src, tgt) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
            let src = casefold(src.trim());
            let tgts: Vec<String> = tgt.split('|').map(|t| casefold(t.trim())).collect();
            if src.is_empty() || src.contains(char::is_whitespace) {
                return Err(bad("source must be one non-empty word"));
            }
            if tgts.iter().any(|t| t.is_empty() || t.contains(char::is_whitespace)) {
                return Err(bad("empty or multi-word translation"));
            }
            if lex.entries.insert(src.clone(), tgts).is_some() {
                return Err(bad("duplicate source word"));
            }
            lex.order.push(src);
        }
        if lex.entries.is_empty() {
            return Err(Error::Empty("lexicon".into()));
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing {
                what: "lexicon".into(),
                path: path.into(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn bundled() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn translations(&self, word: &str) -> Option<&[String]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    /// Source words in file order.
    pub fn sources(&self) -> &[String] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Records how often each source word occurs in a monolingual corpus;
    /// frequent words are preferred when switching is capped.
    pub fn with_frequencies<S: AsRef<str>>(mut self, corpus: &[Vec<S>]) -> Self {
        self.counts.clear();
        for s in corpus {
            for w in s {
                let w = casefold(w.as_ref());
                if self.entries.contains_key(&w) {
                    *self.counts.entry(w).or_default() += 1;
                }
            }
        }
        self
    }

    pub fn frequency(&self, word: &str) -> usize {
        self.counts.get(word).copied().unwrap_or(0)
    }

    /// Reverse map from every L2 form to its L1 source.
    pub fn reverse(&self) -> HashMap<String, String> {
        let mut m = HashMap::new();
        for src in &self.order {
            for t in &self.entries[src] {
                m.entry(t.clone()).or_insert_with(|| src.clone());
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchMode {
    /// At most two words per sentence.
    Deficient,
    /// Whole runs of translatable words switch together.
    Efficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SwitchConfig {
    pub mode: SwitchMode,
    pub switch_prob: f64,
    pub max_switched_words: usize,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            mode: SwitchMode::Deficient,
            switch_prob: 0.5,
            max_switched_words: 2,
            top_k: 1,
            seed: 0,
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.switch_prob) {
            return Err(Error::InvalidArgument(format!(
                "switch_prob {} outside [0, 1]",
                self.switch_prob
            )));
        }
        if self.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn cap(&self) -> usize {
        match self.mode {
            SwitchMode::Deficient => self.max_switched_words.min(2),
            SwitchMode::Efficient => self.max_switched_words,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Replaces selected words of a monolingual sentence with L2 translations.
///
/// Each translatable word is selected with `switch_prob`. In efficient mode a
/// selection spreads to the whole run of adjacent translatable words. When
/// more words are selected than the mode allows, the most frequent ones (by
/// [`BilingualLexicon::with_frequencies`]) are kept, earlier position first on ties.
pub fn lexical_switch<S: AsRef<str>>(
    mono: &[S],
    lex: &BilingualLexicon,
    cfg: &SwitchConfig,
    rng: &mut impl Rng,
) -> Result<TaggedSentence> {
    cfg.validate()?;
    if mono.is_empty() {
        return Err(Error::Empty("monolingual sentence".into()));
    }
    let words: Vec<String> = mono.iter().map(|w| casefold(w.as_ref())).collect();
    let hit: Vec<bool> = words.iter().map(|w| lex.contains(w)).collect();
    let mut chosen: Vec<bool> = hit
        .iter()
        .map(|&h| h && cfg.switch_prob > 0.0 && rng.gen::<f64>() < cfg.switch_prob)
        .collect();
    if cfg.mode == SwitchMode::Efficient {
        let mut i = 0;
        while i < words.len() {
            if !hit[i] {
                i += 1;
                continue;
            }
            let start = i;
            while i < words.len() && hit[i] {
                i += 1;
            }
            if chosen[start..i].iter().any(|&c| c) {
                chosen[start..i].iter_mut().for_each(|c| *c = true);
            }
        }
    }
    let mut picked: Vec<usize> = (0..words.len()).filter(|&i| chosen[i]).collect();
    picked.sort_by(|&a, &b| lex.frequency(&words[b]).cmp(&lex.frequency(&words[a])).then(a.cmp(&b)));
    picked.truncate(cfg.cap());
    let picked: HashSet<usize> = picked.into_iter().collect();

    let mut tokens = Vec::with_capacity(words.len());
    for (i, w) in words.iter().enumerate() {
        if picked.contains(&i) {
            let options = lex.translations(w).expect("picked words are in the lexicon");
            let t = &options[rng.gen_range(0..options.len())];
            tokens.push(TaggedToken::new(t.clone(), Lang::L2));
        } else {
            tokens.push(TaggedToken::new(w.clone(), Lang::L1));
        }
    }
    TaggedSentence::new(tokens, Some(words))
}

fn char_edit_distance(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `100·(1 − d/max(|a|,|b|))` with `d` the character edit distance.
pub fn fuzzy_score(a: &str, b: &str) -> Result<f64> {
    let (a, b): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("fuzzy_score input".into()));
    }
    let d = char_edit_distance(&a, &b);
    Ok(100.0 * (1.0 - d as f64 / a.len().max(b.len()) as f64))
}

fn self_score(s: &TaggedSentence) -> Result<f64> {
    let mono = s
        .mono_ref
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("candidate without monolingual reference".into()))?;
    fuzzy_score(&s.text(), &mono.join(" "))
}

/// The `k` candidates scoring highest against their own monolingual
/// reference, best first; ties keep input order.
pub fn select_top_k(candidates: &[TaggedSentence], k: usize) -> Result<Vec<TaggedSentence>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if k > candidates.len() {
        log::warn!("top-k of {k} requested from {} candidates; keeping all", candidates.len());
    }
    let mut scored = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| Ok((self_score(c)?, i)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().take(k).map(|(_, i)| candidates[i].clone()).collect())
}

/// Word classes of the template grammar. Every class word except subjects
/// and function words has a lexicon entry.
pub mod grammar {
    pub const SUBJECTS: [&str; 6] = ["i", "we", "they", "you", "ravi", "priya"];
    pub const VERBS: [&str; 8] = ["see", "buy", "bring", "want", "like", "make", "find", "read"];
    pub const NOUNS: [&str; 14] = [
        "book", "water", "food", "car", "house", "letter", "tea", "friend", "work", "question", "answer", "story",
        "song", "picture",
    ];
    pub const ADJECTIVES: [&str; 8] = ["big", "small", "new", "old", "good", "beautiful", "hot", "cold"];
    pub const PLACES: [&str; 7] = ["market", "city", "village", "garden", "office", "kitchen", "room"];
    pub const TIMES: [&str; 4] = ["today", "tomorrow", "now", "always"];
}

/// Samples one sentence from the template grammar.
pub fn sample_monolingual(rng: &mut impl Rng) -> Vec<String> {
    use grammar::*;
    let pick = |rng: &mut dyn rand::RngCore, xs: &[&'static str]| xs[rng.gen_range(0..xs.len())];
    let s = pick(rng, &SUBJECTS);
    let v = pick(rng, &VERBS);
    let n = pick(rng, &NOUNS);
    let a = pick(rng, &ADJECTIVES);
    let p = pick(rng, &PLACES);
    let t = pick(rng, &TIMES);
    let words: Vec<&str> = match rng.gen_range(0..8) {
        0 => vec![s, v, "the", n],
        1 => vec![s, v, "the", a, n],
        2 => vec![s, v, "the", n, "in", "the", p],
        3 => vec![s, v, "the", a, n, "in", "the", p],
        4 => vec![s, v, "the", a, n, "in", "the", p, t],
        5 => vec![t, s, v, "the", n],
        6 => vec!["the", n, "in", "the", p, "is", a],
        _ => vec![s, "will", v, "the", a, n, t],
    };
    words.into_iter().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CorpusConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub switch: SwitchConfig,
    /// Candidates generated per kept sentence before top-k filtering.
    pub candidate_factor: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train: 6500,
            val: 500,
            test: 500,
            switch: SwitchConfig::default(),
            candidate_factor: 2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplits {
    pub train: Vec<TaggedSentence>,
    pub val: Vec<TaggedSentence>,
    pub test: Vec<TaggedSentence>,
}

/// Distinct grammar sentences, switched, filtered by fuzzy score, shuffled and split.
///
/// Splits never share a monolingual source sentence.
pub fn generate_corpus(cfg: &CorpusConfig, lex: &BilingualLexicon) -> Result<CorpusSplits> {
    cfg.switch.validate()?;
    let total = cfg.train + cfg.val + cfg.test;
    if total == 0 {
        return Err(Error::InvalidArgument("corpus sizes are all zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let want = total * cfg.candidate_factor.max(1);
    let mut seen = HashSet::new();
    let mut monos = Vec::with_capacity(want);
    let mut attempts = 0usize;
    while monos.len() < want && attempts < 50 * want + 1000 {
        attempts += 1;
        let s = sample_monolingual(&mut rng);
        if s.iter().any(|w| lex.contains(w)) && seen.insert(s.join(" ")) {
            monos.push(s);
        }
    }
    if monos.len() < total {
        return Err(Error::InvalidArgument(format!(
            "grammar yielded only {} distinct sentences for {total} requested",
            monos.len()
        )));
    }
    let lex = lex.clone().with_frequencies(&monos);
    let mut candidates = Vec::with_capacity(monos.len());
    for m in &monos {
        let s = lexical_switch(m, &lex, &cfg.switch, &mut rng)?;
        if cfg.switch.switch_prob == 0.0 || s.count(Lang::L2) > 0 {
            candidates.push(s);
        }
    }
    if candidates.len() < total {
        // Too few switched sentences: take the best of what exists, then fill
        // with unswitched ones so the requested sizes still hold.
        let have: HashSet<String> = candidates.iter().map(|c| c.mono_ref.as_ref().unwrap().join(" ")).collect();
        for m in &monos {
            if candidates.len() >= total {
                break;
            }
            if !have.contains(&m.join(" ")) {
                candidates.push(lexical_switch(m, &lex, &SwitchConfig { switch_prob: 0.0, ..cfg.switch }, &mut rng)?);
            }
        }
    }
    let mut kept = select_top_k(&candidates, total)?;
    kept.shuffle(&mut rng);
    let test = kept.split_off(cfg.train + cfg.val);
    let val = kept.split_off(cfg.train);
    Ok(CorpusSplits { train: kept, val, test })
}

#[derive(Serialize, Deserialize)]
struct Record {
    tokens: Vec<String>,
    langs: Vec<Lang>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mono: Option<Vec<String>>,
}

pub fn to_jsonl_line(s: &TaggedSentence) -> String {
    let r = Record {
        tokens: s.words().into_iter().map(str::to_string).collect(),
        langs: s.langs(),
        mono: s.mono_ref.clone(),
    };
    serde_json::to_string(&r).expect("plain strings serialize")
}

pub fn from_jsonl_line(line: &str) -> Result<TaggedSentence> {
    let r: Record = serde_json::from_str(line)?;
    if r.tokens.len() != r.langs.len() {
        return Err(Error::Shape(format!(
            "{} tokens but {} language tags",
            r.tokens.len(),
            r.langs.len()
        )));
    }
    let tokens = r.tokens.into_iter().zip(r.langs).map(|(w, l)| TaggedToken::new(w, l)).collect();
    TaggedSentence::new(tokens, r.mono)
}

pub fn write_jsonl(path: &Path, corpus: &[TaggedSentence]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for s in corpus {
        writeln!(w, "{}", to_jsonl_line(s)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TaggedSentence>> {
    if !path.exists() {
        return Err(Error::Missing {
            what: "corpus".into(),
            path: path.into(),
        });
    }
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(from_jsonl_line(&line).map_err(|e| Error::format(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn lexicon_parsing() {
        let lex = BilingualLexicon::parse("good\taccha|badhiya\n# note\n\nbook\tkitab\n").unwrap();
        assert_eq!(lex.translations("good").unwrap(), &["accha", "badhiya"]);
        assert_eq!(lex.sources(), &["good", "book"]);
        assert_eq!(lex.reverse()["badhiya"], "good");
        assert!(BilingualLexicon::parse("good accha").is_err());
        assert!(BilingualLexicon::parse("good\t").is_err());
        assert!(BilingualLexicon::parse("good\ta|").is_err());
        assert!(BilingualLexicon::parse("a\tb\na\tc").is_err());
        assert!(BilingualLexicon::parse("").is_err());
        assert_eq!(BilingualLexicon::bundled().len(), 41);
    }

    #[test]
    fn grammar_words_are_covered() {
        let lex = BilingualLexicon::bundled();
        use grammar::*;
        for w in VERBS.iter().chain(&NOUNS).chain(&ADJECTIVES).chain(&PLACES).chain(&TIMES) {
            assert!(lex.contains(w), "{w}");
        }
    }

    #[test]
    fn switch_examples() {
        let lex = BilingualLexicon::bundled();
        let mono = ws("ravi will buy the good book today");
        let none = SwitchConfig {
            switch_prob: 0.0,
            ..Default::default()
        };
        let s = lexical_switch(&mono, &lex, &none, &mut none.rng()).unwrap();
        assert_eq!(s.words(), mono.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(s.count(Lang::L2), 0);
        assert_eq!(s.mono_ref.as_ref().unwrap(), &mono);

        let all = SwitchConfig {
            mode: SwitchMode::Efficient,
            switch_prob: 1.0,
            max_switched_words: 30,
            ..Default::default()
        };
        let s = lexical_switch(&ws("buy good book today"), &lex, &all, &mut all.rng()).unwrap();
        assert!(s.langs().iter().all(|l| *l == Lang::L2));

        let cfg = SwitchConfig {
            switch_prob: 0.7,
            seed: 5,
            ..Default::default()
        };
        let a = lexical_switch(&mono, &lex, &cfg, &mut cfg.rng()).unwrap();
        let b = lexical_switch(&mono, &lex, &cfg, &mut cfg.rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn deficient_mode_caps_and_preserves_positions() {
        let lex = BilingualLexicon::bundled();
        let mono = ws("buy good book today in the big city");
        let cfg = SwitchConfig {
            switch_prob: 1.0,
            max_switched_words: 10,
            ..Default::default()
        };
        let mut rng = cfg.rng();
        for _ in 0..50 {
            let s = lexical_switch(&mono, &lex, &cfg, &mut rng).unwrap();
            assert!(s.count(Lang::L2) <= 2);
            assert_eq!(s.len(), mono.len());
            for (t, m) in s.tokens.iter().zip(&mono) {
                match t.lang {
                    Lang::L1 => assert_eq!(&t.word, m),
                    Lang::L2 => assert!(lex.translations(m).unwrap().contains(&t.word)),
                }
            }
        }
    }

    #[test]
    fn frequency_ranking_decides_capped_switches() {
        let lex = BilingualLexicon::bundled().with_frequencies(&[ws("city city city book book")]);
        let cfg = SwitchConfig {
            switch_prob: 1.0,
            max_switched_words: 1,
            ..Default::default()
        };
        let s = lexical_switch(&ws("buy the book in the city"), &lex, &cfg, &mut cfg.rng()).unwrap();
        assert_eq!(s.tokens[5].lang, Lang::L2);
        assert_eq!(s.count(Lang::L2), 1);
    }

    #[test]
    fn efficient_mode_switches_runs() {
        let lex = BilingualLexicon::bundled();
        let cfg = SwitchConfig {
            mode: SwitchMode::Efficient,
            switch_prob: 0.3,
            max_switched_words: 30,
            seed: 1,
            ..Default::default()
        };
        let mut rng = cfg.rng();
        for _ in 0..100 {
            let s = lexical_switch(&ws("i buy the good book today"), &lex, &cfg, &mut rng).unwrap();
            let l: Vec<bool> = s.langs().iter().map(|l| *l == Lang::L2).collect();
            // "good book today" is one run: all or nothing.
            assert!(l[3] == l[4] && l[4] == l[5]);
        }
    }

    #[test]
    fn fuzzy_examples() {
        assert_eq!(fuzzy_score("abc", "abc").unwrap(), 100.0);
        assert_eq!(fuzzy_score("abc", "xyz").unwrap(), 0.0);
        assert_eq!(fuzzy_score("abcd", "abed").unwrap(), 75.0);
        assert!(fuzzy_score("", "a").is_err());
    }

    fn cand(cs: &str, mono: &str) -> TaggedSentence {
        TaggedSentence::new(
            ws(cs).into_iter().map(|w| TaggedToken::new(w, Lang::L1)).collect(),
            Some(ws(mono)),
        )
        .unwrap()
    }

    #[test]
    fn top_k_matches_sort_oracle() {
        let c = vec![
            cand("a b c", "a b d"),
            cand("a b c", "a b c"),
            cand("x y", "a b"),
            cand("a c", "a b"),
            cand("q b c", "a b d"),
        ];
        let scores: Vec<f64> = c.iter().map(|s| self_score(s).unwrap()).collect();
        let mut idx: Vec<usize> = (0..c.len()).collect();
        // Exhaustive: position i precedes j iff its score is higher, or equal with smaller index.
        idx.sort_by(|&i, &j| {
            let before = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
            if before(i, j) {
                std::cmp::Ordering::Less
            } else {
                std::cmp::Ordering::Greater
            }
        });
        let got = select_top_k(&c, 5).unwrap();
        assert_eq!(got, idx.iter().map(|&i| c[i].clone()).collect::<Vec<_>>());
        assert_eq!(select_top_k(&c, 1).unwrap()[0], c[1]);
        assert_eq!(select_top_k(&c, 9).unwrap().len(), 5);
        assert!(select_top_k(&c, 0).is_err());
    }

    #[test]
    fn corpus_generation_is_deterministic_and_disjoint() {
        let lex = BilingualLexicon::bundled();
        let cfg = CorpusConfig {
            train: 40,
            val: 10,
            test: 10,
            seed: 3,
            ..Default::default()
        };
        let a = generate_corpus(&cfg, &lex).unwrap();
        assert_eq!(a, generate_corpus(&cfg, &lex).unwrap());
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (40, 10, 10));
        let key = |s: &TaggedSentence| s.mono_ref.as_ref().unwrap().join(" ");
        let tr: HashSet<String> = a.train.iter().map(key).collect();
        assert!(a.val.iter().chain(&a.test).all(|s| !tr.contains(&key(s))));
        assert!(a.train.iter().all(|s| (1..=2).contains(&s.count(Lang::L2))));
    }

    #[test]
    fn jsonl_round_trip() {
        let s = cand("ravi kharidte the book", "ravi buy the book");
        let line = to_jsonl_line(&s);
        assert_eq!(
            line,
            r#"{"tokens":["ravi","kharidte","the","book"],"langs":["L1","L1","L1","L1"],"mono":["ravi","buy","the","book"]}"#
        );
        assert_eq!(from_jsonl_line(&line).unwrap(), s);
        assert!(from_jsonl_line(r#"{"tokens":["a"],"langs":[]}"#).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_jsonl(&p, &[s.clone(), s.clone()]).unwrap();
        assert_eq!(read_jsonl(&p).unwrap(), vec![s.clone(), s]);
        assert!(matches!(read_jsonl(&dir.path().join("none")), Err(Error::Missing { .. })));
    }
}
