//! Word error rate, perplexity, BLEU, and evaluation reports.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{casefold, RESERVED};

/// Edit counts of one minimum-cost alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditCounts {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl EditCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `100·(S+D+I)/N`.
    pub fn percent(&self) -> f64 {
        if self.ref_len == 0 {
            return 0.0;
        }
        100.0 * self.errors() as f64 / self.ref_len as f64
    }

    pub fn merge(&mut self, other: &EditCounts) {
        self.substitutions += other.substitutions;
        self.deletions += other.deletions;
        self.insertions += other.insertions;
        self.ref_len += other.ref_len;
    }
}

/// Whitespace split after casefolding, with `[PAD]` tokens removed.
pub fn normalize_words(text: &str) -> Vec<String> {
    let pad = casefold(RESERVED[0]);
    casefold(text)
        .split_whitespace()
        .filter(|w| *w != pad)
        .map(str::to_string)
        .collect()
}

/// Word-level Levenshtein alignment with unit costs.
///
/// Backtracking prefers match/substitution, then deletion, then insertion.
pub fn wer<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R]) -> Result<EditCounts> {
    if reference.is_empty() {
        return Err(Error::Empty("reference".into()));
    }
    let (h, r) = (hyp.len(), reference.len());
    let w = h + 1;
    let mut d = vec![0usize; (r + 1) * w];
    for j in 0..=h {
        d[j] = j;
    }
    for i in 1..=r {
        d[i * w] = i;
        for j in 1..=h {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            let diag = d[(i - 1) * w + j - 1] + usize::from(!same);
            d[i * w + j] = diag.min(d[(i - 1) * w + j] + 1).min(d[i * w + j - 1] + 1);
        }
    }
    let mut c = EditCounts {
        ref_len: r,
        ..Default::default()
    };
    let (mut i, mut j) = (r, h);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1].as_ref() == hyp[j - 1].as_ref();
            if here == d[(i - 1) * w + j - 1] + usize::from(!same) {
                if !same {
                    c.substitutions += 1;
                }
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && here == d[(i - 1) * w + j] + 1 {
            c.deletions += 1;
            i -= 1;
        } else {
            c.insertions += 1;
            j -= 1;
        }
    }
    Ok(c)
}

/// WER of two raw strings under [`normalize_words`].
pub fn wer_text(hyp: &str, reference: &str) -> Result<EditCounts> {
    wer(&normalize_words(hyp), &normalize_words(reference))
}

/// Character-level edit counts; spaces count as characters.
pub fn cer(hyp: &str, reference: &str) -> Result<EditCounts> {
    let chars = |t: &str| t.chars().map(String::from).collect::<Vec<_>>();
    wer(&chars(hyp), &chars(reference))
}

/// Pooled edit counts over sentence pairs.
pub fn corpus_wer<S: AsRef<str>, R: AsRef<str>>(pairs: &[(Vec<S>, Vec<R>)]) -> Result<EditCounts> {
    let mut total = EditCounts::default();
    for (h, r) in pairs {
        total.merge(&wer(h, r)?);
    }
    Ok(total)
}

/// `exp(−mean ln p)`. A zero-probability token yields `+∞` with a warning.
pub fn perplexity(log_probs: &[f64]) -> Result<f64> {
    if log_probs.is_empty() {
        return Err(Error::Empty("token log-probabilities".into()));
    }
    if log_probs.iter().any(|lp| lp.is_nan() || *lp > 1e-12) {
        return Err(Error::InvalidArgument("log-probabilities must be ≤ 0".into()));
    }
    if log_probs.iter().any(|lp| lp.is_infinite()) {
        log::warn!("zero-probability token; perplexity is infinite");
        return Ok(f64::INFINITY);
    }
    let mean = log_probs.iter().sum::<f64>() / log_probs.len() as f64;
    Ok((-mean).exp())
}

fn ngrams<S: AsRef<str>>(ws: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if ws.len() >= n {
        for win in ws.windows(n) {
            *m.entry(win.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    m
}

/// Corpus BLEU with clipped precisions for orders `1..=max_n` and brevity penalty.
///
/// If any order `n ≥ 2` has zero matches, all orders `n ≥ 2` use add-one
/// counts `(m+1)/(t+1)`. Zero unigram matches give a score of 0.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<R>], max_n: usize) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::Shape(format!("{} hypotheses vs {} references", hyps.len(), refs.len())));
    }
    if refs.is_empty() || max_n == 0 {
        return Err(Error::Empty("references".into()));
    }
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let rc = ngrams(r, n);
            for (g, c) in ngrams(h, n) {
                total[n - 1] += c;
                matched[n - 1] += c.min(rc.get(&g).copied().unwrap_or(0));
            }
        }
    }
    if hyp_len == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let smooth = matched[1..].iter().any(|&m| m == 0);
    let mut log_p = (matched[0] as f64 / total[0] as f64).ln();
    for n in 1..max_n {
        let p = if smooth {
            (matched[n] + 1) as f64 / (total[n] + 1) as f64
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_p += p.ln();
    }
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).min(0.0);
    Ok((log_p / max_n as f64 + bp).exp().min(1.0))
}

/// Add-one smoothed word bigram model used to score output fluency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramLm {
    unigrams: HashMap<String, usize>,
    bigrams: HashMap<String, HashMap<String, usize>>,
    vocab: usize,
}

const BOUNDARY: &str = "</s>";

impl BigramLm {
    pub fn fit<S: AsRef<str>>(sentences: &[Vec<S>]) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Empty("language-model corpus".into()));
        }
        let mut lm = Self {
            unigrams: HashMap::new(),
            bigrams: HashMap::new(),
            vocab: 0,
        };
        for s in sentences {
            let mut prev = BOUNDARY.to_string();
            for w in s.iter().map(|w| casefold(w.as_ref())).chain([BOUNDARY.to_string()]) {
                *lm.unigrams.entry(prev.clone()).or_default() += 1;
                *lm.bigrams.entry(prev).or_default().entry(w.clone()).or_default() += 1;
                prev = w;
            }
        }
        let mut words: Vec<&String> = lm.unigrams.keys().collect();
        words.extend(lm.bigrams.values().flat_map(|m| m.keys()));
        words.sort();
        words.dedup();
        // One extra slot for unseen words.
        lm.vocab = words.len() + 1;
        Ok(lm)
    }

    /// Natural-log probabilities of each word and of the closing boundary.
    pub fn log_probs<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<f64> {
        let mut prev = BOUNDARY.to_string();
        let mut out = Vec::with_capacity(sentence.len() + 1);
        for w in sentence.iter().map(|w| casefold(w.as_ref())).chain([BOUNDARY.to_string()]) {
            let ctx = self.unigrams.get(&prev).copied().unwrap_or(0);
            let pair = self.bigrams.get(&prev).and_then(|m| m.get(&w)).copied().unwrap_or(0);
            out.push(((pair + 1) as f64 / (ctx + self.vocab) as f64).ln());
            prev = w;
        }
        out
    }

    pub fn corpus_perplexity<S: AsRef<str>>(&self, sentences: &[Vec<S>]) -> Result<f64> {
        let lps: Vec<f64> = sentences.iter().flat_map(|s| self.log_probs(s)).collect();
        perplexity(&lps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub system: String,
    pub wer_percent: f64,
    pub ppl: f64,
    pub bleu: f64,
    pub n_sentences: usize,
    pub edits: Vec<EditCounts>,
}

pub const REPORT_HEADER: &str = "system,wer,ppl,bleu,n";

impl EvalReport {
    /// Scores hypotheses against references; `lm` supplies perplexity of the hypotheses.
    pub fn evaluate(system: &str, hyps: &[Vec<String>], refs: &[Vec<String>], lm: &BigramLm) -> Result<Self> {
        if hyps.len() != refs.len() {
            return Err(Error::Shape(format!("{} hypotheses vs {} references", hyps.len(), refs.len())));
        }
        let norm = |s: &Vec<String>| normalize_words(&s.join(" "));
        let hyps: Vec<Vec<String>> = hyps.iter().map(norm).collect();
        let refs: Vec<Vec<String>> = refs.iter().map(norm).collect();
        let edits = hyps.iter().zip(&refs).map(|(h, r)| wer(h, r)).collect::<Result<Vec<_>>>()?;
        let mut pooled = EditCounts::default();
        edits.iter().for_each(|e| pooled.merge(e));
        Ok(Self {
            system: system.to_string(),
            wer_percent: pooled.percent(),
            ppl: lm.corpus_perplexity(&hyps)?,
            bleu: bleu(&hyps, &refs, 4)?,
            n_sentences: hyps.len(),
            edits,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{}",
            self.system, self.wer_percent, self.ppl, self.bleu, self.n_sentences
        )
    }

    pub fn to_csv(reports: &[EvalReport]) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn write_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
        std::fs::write(path, Self::to_csv(reports)).map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    /// Parses rows written by [`to_csv`](Self::to_csv); per-sentence edits are not stored there.
    pub fn from_csv(text: &str) -> Result<Vec<EvalReport>> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::InvalidArgument("missing report header".into()));
        }
        lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let bad = || Error::InvalidArgument(format!("bad report row {l:?}"));
                if f.len() != 5 {
                    return Err(bad());
                }
                Ok(EvalReport {
                    system: f[0].to_string(),
                    wer_percent: f[1].parse().map_err(|_| bad())?,
                    ppl: f[2].parse().map_err(|_| bad())?,
                    bleu: f[3].parse().map_err(|_| bad())?,
                    n_sentences: f[4].parse().map_err(|_| bad())?,
                    edits: Vec::new(),
                })
            })
            .collect()
    }
}
