//! Label-synchronous joint CTC/attention beam search and CTC-triggered truncation.

use std::cmp::Ordering;

use log::warn;
use serde::{Deserialize, Serialize};

use super::ctc::{CtcPrefixScorer, CtcPrefixState, BLANK};
use super::data::EOS_CHAR;
use crate::attention::MASKED;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// An autoregressive decoder seen as a prefix-scoring oracle.
pub trait AttentionDecoder {
    type State: Clone;

    fn initial(&self) -> Self::State;

    /// Consumes `prev` (the end marker at position 0) and returns the next state
    /// with log-probabilities over the output units.
    fn step(&self, state: &Self::State, prev: usize) -> Result<(Self::State, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BeamConfig {
    pub beam: usize,
    /// CTC weight λ in `λ·ln P_ctc + (1−λ)·ln P_att`.
    pub lambda: f64,
    /// Longest output in characters, end marker excluded.
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 4,
            lambda: 0.3,
            max_len: 200,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam < 1 {
            return Err(Error::InvalidArgument("beam must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Clone)]
struct Hyp<S> {
    tokens: Vec<usize>,
    state: S,
    att: f64,
    ctc: Option<CtcPrefixState>,
    score: f64,
}

/// Best first; equal scores fall back to the lexicographically smaller token sequence.
fn rank(a: (f64, &[usize]), b: (f64, &[usize])) -> Ordering {
    b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then_with(|| a.1.cmp(b.1))
}

/// Sorts candidates into search order; the result does not depend on input order.
pub fn rank_candidates(cands: &mut [(f64, Vec<usize>)]) {
    cands.sort_by(|a, b| rank((a.0, &a.1), (b.0, &b.1)));
}

/// Joint beam search. With `ctc_log_probs = None` (or λ = 0) this is plain
/// attention beam search. The returned sequence excludes the end marker.
///
/// Scores only decrease as a hypothesis grows, so the search stops as soon as
/// the best finished hypothesis is at least as good as every live one.
pub fn joint_beam_search<D: AttentionDecoder>(dec: &D, ctc_log_probs: Option<&Tensor>, cfg: &BeamConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let lambda = if ctc_log_probs.is_some() { cfg.lambda } else { 0.0 };
    let scorer = match ctc_log_probs {
        Some(lp) if lambda > 0.0 => {
            if lp.rows() == 0 {
                return Err(Error::Empty("CTC posteriors".into()));
            }
            Some(CtcPrefixScorer::new(lp, BLANK))
        }
        _ => None,
    };
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        state: dec.initial(),
        att: 0.0,
        ctc: scorer.as_ref().map(CtcPrefixScorer::initial),
        score: 0.0,
    }];
    let mut best: Option<(f64, Vec<usize>)> = None;
    for pos in 0..=cfg.max_len {
        let mut cands: Vec<(Hyp<D::State>, bool)> = Vec::new();
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(EOS_CHAR);
            let (state, lp) = dec.step(&h.state, prev)?;
            for (k, &l) in lp.iter().enumerate() {
                if k == BLANK || l == f64::NEG_INFINITY {
                    continue;
                }
                let end = k == EOS_CHAR;
                if !end && pos == cfg.max_len {
                    continue;
                }
                let att = h.att + l;
                let (ctc_state, ctc_score) = match (&scorer, &h.ctc) {
                    (Some(sc), Some(cs)) if end => (None, sc.final_score(cs)),
                    (Some(sc), Some(cs)) => {
                        let next = sc.extend(cs, k);
                        let p = next.prefix_score;
                        (Some(next), p)
                    }
                    _ => (None, 0.0),
                };
                let score = lambda * ctc_score + (1.0 - lambda) * att;
                if score == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                if !end {
                    tokens.push(k);
                }
                cands.push((
                    Hyp {
                        tokens,
                        state: state.clone(),
                        att,
                        ctc: ctc_state,
                        score,
                    },
                    end,
                ));
            }
        }
        cands.sort_by(|a, b| rank((a.0.score, &a.0.tokens), (b.0.score, &b.0.tokens)).then(a.1.cmp(&b.1)));
        cands.truncate(cfg.beam);
        live.clear();
        for (h, end) in cands {
            if end {
                let better = match &best {
                    None => true,
                    Some((s, t)) => rank((h.score, &h.tokens), (*s, t)) == Ordering::Less,
                };
                if better {
                    best = Some((h.score, h.tokens));
                }
            } else {
                live.push(h);
            }
        }
        let top_live = live.first().map(|h| h.score);
        match (&best, top_live) {
            (_, None) => break,
            (Some((s, _)), Some(l)) if *s >= l => break,
            _ => {}
        }
    }
    best.map(|(_, t)| t)
        .ok_or_else(|| Error::InvalidArgument("beam search found no complete hypothesis".into()))
}

/// Per-output-position attention windows derived from CTC label onsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerWindows {
    /// Onset frames in order.
    pub triggers: Vec<usize>,
    /// Exclusive end frame of the window for each triggered position.
    pub ends: Vec<usize>,
    pub frames: usize,
    /// No onset was found; every position attends to the full sequence.
    pub fallback: bool,
}

impl TriggerWindows {
    /// Windows `H[0..max(t + lookahead, t + 1)]` for onset frames `t`.
    pub fn from_onsets(triggers: Vec<usize>, lookahead: usize, frames: usize) -> Self {
        let ends = triggers.iter().map(|&t| (t + lookahead).max(t + 1).min(frames)).collect();
        let fallback = triggers.is_empty();
        Self {
            triggers,
            ends,
            frames,
            fallback,
        }
    }

    /// Additive `rows×frames` mask hiding from each output position the frames past its window.
    pub fn mask(&self, rows: usize) -> Tensor {
        let mut m = Tensor::zeros(&[rows, self.frames]);
        for i in 0..rows {
            for j in self.window(i)..self.frames {
                m.set(i, j, MASKED);
            }
        }
        m
    }

    /// Exclusive end frame visible to output position `i`.
    pub fn window(&self, i: usize) -> usize {
        self.ends.get(i).copied().unwrap_or(self.frames)
    }

    /// The encoder states visible to output position `i`.
    pub fn truncate(&self, h: &Tensor, i: usize) -> Tensor {
        h.slice_rows(0, self.window(i).min(h.rows()))
    }
}

/// Finds label onsets in `T×V` CTC posteriors (probabilities, not logs).
///
/// A trigger fires at frame `t` when the most probable non-blank unit there
/// exceeds `threshold` (strictly) and differs from the unit that fired or
/// held at `t−1`. A frame with no unit above threshold resets, so repeated
/// characters separated by blanks trigger twice. Position `i` then sees
/// `H[0..t_i + lookahead]`, never less than `H[0..=t_i]`.
pub fn trigger_truncate(posteriors: &Tensor, threshold: f64, lookahead: usize) -> Result<TriggerWindows> {
    let frames = posteriors.rows();
    if frames == 0 {
        return Err(Error::Empty("CTC posteriors".into()));
    }
    let mut triggers = Vec::new();
    let mut held: Option<usize> = None;
    for t in 0..frames {
        let row = posteriors.row(t);
        let best = row
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != BLANK)
            .fold(None, |acc: Option<(usize, f64)>, (k, &p)| match acc {
                Some((_, q)) if q >= p => acc,
                _ => Some((k, p)),
            });
        match best {
            Some((k, p)) if p > threshold => {
                if held != Some(k) {
                    triggers.push(t);
                }
                held = Some(k);
            }
            _ => held = None,
        }
    }
    let w = TriggerWindows::from_onsets(triggers, lookahead, frames);
    if w.fallback {
        warn!("no CTC triggers above {threshold}; attending to the full sequence");
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asr::ctc::collapse;
    use crate::numerics::tensor::log_sum_exp;

    /// Attention scores that depend on the whole prefix through a fixed hash.
    struct TableDecoder {
        vocab: usize,
    }

    fn pseudo(prefix: &[usize], k: usize) -> f64 {
        let mut h: u64 = 1469598103934665603;
        for &x in prefix.iter().chain(std::iter::once(&k)) {
            h ^= x as u64 + 1;
            h = h.wrapping_mul(1099511628211);
        }
        (h % 1000) as f64 / 250.0
    }

    impl TableDecoder {
        fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
            let mut raw: Vec<f64> = (0..self.vocab).map(|k| pseudo(prefix, k)).collect();
            raw[BLANK] = f64::NEG_INFINITY;
            let z = log_sum_exp(&raw);
            raw.iter().map(|r| r - z).collect()
        }
    }

    impl AttentionDecoder for TableDecoder {
        type State = Vec<usize>;
        fn initial(&self) -> Vec<usize> {
            Vec::new()
        }
        fn step(&self, state: &Vec<usize>, prev: usize) -> Result<(Vec<usize>, Vec<f64>)> {
            let mut s = state.clone();
            if !(s.is_empty() && prev == EOS_CHAR) {
                s.push(prev);
            }
            let lp = self.log_probs(&s);
            Ok((s, lp))
        }
    }

    fn att_score(dec: &TableDecoder, seq: &[usize]) -> f64 {
        let mut total = 0.0;
        for i in 0..=seq.len() {
            let next = seq.get(i).copied().unwrap_or(EOS_CHAR);
            total += dec.log_probs(&seq[..i])[next];
        }
        total
    }

    /// `ln P(labels)` by enumerating every frame path.
    fn brute_ctc(lp: &Tensor, labels: &[usize]) -> f64 {
        let (t_len, v) = (lp.rows(), lp.cols());
        let mut terms = Vec::new();
        for code in 0..v.pow(t_len as u32) {
            let mut path = Vec::new();
            let mut c = code;
            for _ in 0..t_len {
                path.push(c % v);
                c /= v;
            }
            if collapse(&path, BLANK) == labels {
                terms.push(path.iter().enumerate().map(|(t, &k)| lp.get(t, k)).sum());
            }
        }
        if terms.is_empty() {
            f64::NEG_INFINITY
        } else {
            log_sum_exp(&terms)
        }
    }

    fn toy_ctc() -> Tensor {
        // Units: blank, end marker, 'a', 'b', 'c'.
        let p = [[0.3, 0.01, 0.4, 0.19, 0.1], [0.5, 0.01, 0.1, 0.3, 0.09]];
        Tensor::from_rows(&p.iter().map(|r| r.iter().map(|x: &f64| x.ln()).collect()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn exhaustive_beam_matches_brute_force() {
        let dec = TableDecoder { vocab: 5 };
        let lp = toy_ctc();
        let chars = [2usize, 3, 4];
        for &lambda in &[0.0, 0.3, 0.7, 1.0] {
            let mut seqs: Vec<Vec<usize>> = vec![vec![]];
            for &a in &chars {
                seqs.push(vec![a]);
                for &b in &chars {
                    seqs.push(vec![a, b]);
                }
            }
            let mut scored: Vec<(f64, Vec<usize>)> = seqs
                .into_iter()
                .map(|s| (lambda * brute_ctc(&lp, &s) + (1.0 - lambda) * att_score(&dec, &s), s))
                .filter(|(x, _)| x.is_finite())
                .collect();
            rank_candidates(&mut scored);
            let cfg = BeamConfig {
                beam: 5usize.pow(2) * 4,
                lambda,
                max_len: 2,
            };
            let got = joint_beam_search(&dec, Some(&lp), &cfg).unwrap();
            assert_eq!(got, scored[0].1, "lambda {lambda}");
        }
    }

    #[test]
    fn beam_one_without_ctc_is_greedy() {
        let dec = TableDecoder { vocab: 6 };
        let cfg = BeamConfig {
            beam: 1,
            lambda: 0.0,
            max_len: 12,
        };
        let got = joint_beam_search(&dec, None, &cfg).unwrap();
        let mut greedy = Vec::new();
        loop {
            let lp = dec.log_probs(&greedy);
            let k = crate::numerics::tensor::argmax(&lp);
            if k == EOS_CHAR || greedy.len() == 12 {
                break;
            }
            greedy.push(k);
        }
        assert_eq!(got, greedy);
        assert!(joint_beam_search(&dec, None, &BeamConfig { beam: 0, ..cfg }).is_err());
    }

    #[test]
    fn ranking_ignores_input_order() {
        let mut a = vec![(-1.0, vec![3, 2]), (-1.0, vec![2, 9]), (-0.5, vec![7]), (-2.0, vec![])];
        let mut b = a.clone();
        b.reverse();
        rank_candidates(&mut a);
        rank_candidates(&mut b);
        assert_eq!(a, b);
        assert_eq!(a[0].1, vec![7]);
        assert_eq!(a[1].1, vec![2, 9]);
    }

    fn spike(frames: usize, at: &[(usize, usize)]) -> Tensor {
        let mut t = Tensor::zeros(&[frames, 4]);
        for r in 0..frames {
            t.set(r, BLANK, 0.9);
            t.set(r, 2, 0.05);
            t.set(r, 3, 0.05);
        }
        for &(f, k) in at {
            t.set(f, BLANK, 0.05);
            t.set(f, k, 0.9);
        }
        t
    }

    #[test]
    fn spike_gives_lookahead_window() {
        let w = trigger_truncate(&spike(10, &[(5, 2)]), 0.5, 2).unwrap();
        assert_eq!(w.triggers, vec![5]);
        assert_eq!(w.window(0), 7);
        let h = Tensor::zeros(&[10, 3]);
        assert_eq!(w.truncate(&h, 0).rows(), 7);
        // Positions past the last trigger see everything.
        assert_eq!(w.window(1), 10);
        assert!(!w.fallback);
        let m = w.mask(2);
        assert_eq!(m.get(0, 6), 0.0);
        assert_eq!(m.get(0, 7), MASKED);
        assert!(m.row(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn degenerate_thresholds() {
        let p = spike(6, &[(2, 3)]);
        let w = trigger_truncate(&p, 0.0, 2).unwrap();
        assert_eq!(w.triggers[0], 0);
        assert_eq!(w.window(0), 2);
        let w = trigger_truncate(&p, 1.0, 2).unwrap();
        assert!(w.fallback);
        assert_eq!(w.window(0), 6);
    }

    #[test]
    fn repeats_need_a_gap() {
        let w = trigger_truncate(&spike(8, &[(1, 2), (2, 2), (4, 2), (5, 3)]), 0.5, 0).unwrap();
        assert_eq!(w.triggers, vec![1, 4, 5]);
        assert_eq!(w.ends, vec![2, 5, 6]);
    }
}
