//! Language-tagged sentences, vocabularies, and greedy word-piece tokenization.
//!
//! Vocabularies reserve ids `0..5` for `[PAD] [MASK] [BOS] [EOS] [UNK]`.
//! Continuation pieces carry a `##` prefix. All text is casefolded first.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const MASK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const UNK: usize = 4;
pub const RESERVED: [&str; 5] = ["[PAD]", "[MASK]", "[BOS]", "[EOS]", "[UNK]"];
pub const CONTINUATION: &str = "##";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lang {
    L1,
    L2,
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lang::L1 => "L1",
            Lang::L2 => "L2",
        })
    }
}

impl std::str::FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" | "l1" => Ok(Lang::L1),
            "L2" | "l2" => Ok(Lang::L2),
            other => Err(Error::InvalidArgument(format!("unknown language tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedToken {
    pub word: String,
    pub lang: Lang,
}

impl TaggedToken {
    pub fn new(word: impl Into<String>, lang: Lang) -> Self {
        Self {
            word: word.into(),
            lang,
        }
    }
}

/// A code-switched sentence with an optional monolingual reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaggedSentence {
    pub tokens: Vec<TaggedToken>,
    pub mono_ref: Option<Vec<String>>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<TaggedToken>, mono_ref: Option<Vec<String>>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("tagged sentence".into()));
        }
        if tokens.iter().any(|t| t.word.is_empty()) {
            return Err(Error::InvalidArgument("empty word in tagged sentence".into()));
        }
        if mono_ref.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Empty("monolingual reference".into()));
        }
        Ok(Self { tokens, mono_ref })
    }

    /// Every word tagged with one language.
    pub fn monolingual(words: &[&str], lang: Lang) -> Result<Self> {
        Self::new(words.iter().map(|w| TaggedToken::new(*w, lang)).collect(), None)
    }

    pub fn words(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.word.as_str()).collect()
    }

    pub fn langs(&self) -> Vec<Lang> {
        self.tokens.iter().map(|t| t.lang).collect()
    }

    pub fn text(&self) -> String {
        self.words().join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn count(&self, lang: Lang) -> usize {
        self.tokens.iter().filter(|t| t.lang == lang).count()
    }
}

pub fn casefold(s: &str) -> String {
    s.to_lowercase()
}

/// Bijective piece ↔ id map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pieces: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn with_reserved() -> Self {
        let mut v = Self {
            pieces: Vec::new(),
            ids: HashMap::new(),
        };
        for r in RESERVED {
            v.push(r.to_string());
        }
        v
    }

    fn push(&mut self, piece: String) -> bool {
        if self.ids.contains_key(&piece) {
            return false;
        }
        self.ids.insert(piece.clone(), self.pieces.len());
        self.pieces.push(piece);
        true
    }

    /// Whole-word vocabulary: reserved ids, then every distinct word by
    /// descending frequency, ties lexicographic.
    pub fn from_words<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::with_reserved();
        for (w, _) in ranked_counts(words.into_iter().map(casefold)) {
            v.push(w);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn id(&self, piece: &str) -> Option<usize> {
        self.ids.get(piece).copied()
    }

    pub fn contains(&self, piece: &str) -> bool {
        self.ids.contains_key(piece)
    }

    pub fn piece(&self, id: usize) -> &str {
        &self.pieces[id]
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Whole-word id, `UNK` when absent.
    pub fn word_id(&self, word: &str) -> usize {
        self.id(&casefold(word)).unwrap_or(UNK)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (id, p) in self.pieces.iter().enumerate() {
            out.push_str(p);
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (piece, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::InvalidArgument(format!("vocab line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("vocab line {}: bad id", n + 1)))?;
            if entries.insert(id, piece.to_string()).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate id {id}")));
            }
        }
        let mut v = Self {
            pieces: Vec::new(),
            ids: HashMap::new(),
        };
        for (expect, (id, piece)) in entries.into_iter().enumerate() {
            if id != expect {
                return Err(Error::InvalidArgument(format!("vocab ids not contiguous at {expect}")));
            }
            if !v.push(piece) {
                return Err(Error::InvalidArgument(format!("duplicate piece at id {id}")));
            }
        }
        if v.pieces.len() < RESERVED.len() || v.pieces[..RESERVED.len()] != RESERVED {
            return Err(Error::InvalidArgument("reserved ids missing or reassigned".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Distinct items by descending count, ties broken lexicographically.
fn ranked_counts(items: impl Iterator<Item = String>) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for it in items {
        *counts.entry(it).or_default() += 1;
    }
    let mut ranked: Vec<_> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked
}

fn char_piece(c: char, initial: bool) -> String {
    if initial {
        c.to_string()
    } else {
        format!("{CONTINUATION}{c}")
    }
}

/// Builds a word-piece vocabulary of at most `max_pieces` entries (reserved ids included).
///
/// Frequent words (seen at least twice) enter whole, by frequency. If the
/// single-character pieces needed to spell every corpus word fit in the
/// budget, they are kept back for that purpose. Any budget left is filled
/// with character spans of the words that did not enter whole: prefixes and
/// `##`-continuations ranked by weighted count, then length, then text.
pub fn build_vocab(corpus: &[TaggedSentence], max_pieces: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    if max_pieces <= RESERVED.len() {
        return Err(Error::InvalidArgument(format!(
            "max_pieces must exceed {}",
            RESERVED.len()
        )));
    }
    let words = corpus.iter().flat_map(|s| {
        s.tokens
            .iter()
            .map(|t| casefold(&t.word))
            .chain(s.mono_ref.iter().flatten().map(|w| casefold(w)))
    });
    let ranked = ranked_counts(words);

    let mut chars: BTreeMap<String, usize> = BTreeMap::new();
    for (w, n) in &ranked {
        for (i, c) in w.chars().enumerate() {
            *chars.entry(char_piece(c, i == 0)).or_default() += n;
        }
    }
    let mut chars: Vec<_> = chars.into_iter().collect();
    chars.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let budget = max_pieces - RESERVED.len();
    let reserve = if chars.len() <= budget { chars.len() } else { 0 };

    let mut v = Vocab::with_reserved();
    let mut whole = Vec::new();
    for (w, n) in &ranked {
        if v.len() - RESERVED.len() >= budget - reserve {
            break;
        }
        if *n >= 2 && v.push(w.clone()) {
            whole.push(w.as_str());
        }
    }
    if reserve > 0 {
        for (p, _) in &chars {
            v.push(p.clone());
        }
    }

    if v.len() < max_pieces {
        let mut spans: BTreeMap<String, usize> = BTreeMap::new();
        for (w, n) in &ranked {
            if whole.contains(&w.as_str()) {
                continue;
            }
            let cs: Vec<char> = w.chars().collect();
            for i in 0..cs.len() {
                for j in i + 1..=cs.len() {
                    let body: String = cs[i..j].iter().collect();
                    let piece = if i == 0 { body } else { format!("{CONTINUATION}{body}") };
                    *spans.entry(piece).or_default() += n;
                }
            }
        }
        let mut spans: Vec<_> = spans.into_iter().collect();
        let span_len = |p: &str| p.strip_prefix(CONTINUATION).unwrap_or(p).chars().count();
        spans.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| span_len(&b.0).cmp(&span_len(&a.0)))
                .then_with(|| a.0.cmp(&b.0))
        });
        for (p, _) in spans {
            if v.len() >= max_pieces {
                break;
            }
            v.push(p);
        }
    }
    Ok(v)
}

/// Greedy longest-match-first segmentation of one word.
///
/// A position no piece can start from emits `UNK` for that single character.
pub fn tokenize(word: &str, v: &Vocab) -> Vec<usize> {
    let cs: Vec<char> = casefold(word).chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut buf = String::new();
    while i < cs.len() {
        let mut found = None;
        for j in (i + 1..=cs.len()).rev() {
            buf.clear();
            if i > 0 {
                buf.push_str(CONTINUATION);
            }
            buf.extend(&cs[i..j]);
            if let Some(id) = v.id(&buf) {
                if id >= RESERVED.len() {
                    found = Some((id, j));
                    break;
                }
            }
        }
        match found {
            Some((id, j)) => {
                out.push(id);
                i = j;
            }
            None => {
                out.push(UNK);
                i += 1;
            }
        }
    }
    out
}

/// Joins the pieces of one word; `PAD` contributes nothing.
pub fn detokenize(ids: &[usize], v: &Vocab) -> String {
    let mut out = String::new();
    for &id in ids {
        if id == PAD {
            continue;
        }
        let p = v.piece(id);
        out.push_str(p.strip_prefix(CONTINUATION).unwrap_or(p));
    }
    out
}
