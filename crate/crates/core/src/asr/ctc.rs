//! Connectionist temporal classification in log space.
//!
//! All inputs are `T×V` matrices of per-frame log-probabilities. Blank is a
//! label id like any other; [`BLANK`] is the convention used by the ASR models.

use crate::error::{Error, Result};
use crate::numerics::tensor::{log_add_exp, log_sum_exp, Tensor};

pub const BLANK: usize = 0;

const NEG_INF: f64 = f64::NEG_INFINITY;

/// Forward variables over the blank-interleaved label sequence.
#[derive(Debug, Clone)]
pub struct CtcTable {
    /// `T×(2L+1)` matrix of `ln α_t(s)`.
    pub log_alpha: Tensor,
    /// `ln P(labels | input)`.
    pub log_likelihood: f64,
}

/// Minimum number of frames able to emit `labels`: one per label plus one
/// separating blank for every adjacent repeat.
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

fn extend_labels(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

fn validate(log_probs: &Tensor, labels: &[usize], blank: usize) -> Result<()> {
    if log_probs.shape().len() != 2 || log_probs.rows() == 0 {
        return Err(Error::Shape("CTC expects a non-empty T×V matrix".into()));
    }
    let v = log_probs.cols();
    if blank >= v {
        return Err(Error::InvalidArgument(format!("blank {blank} outside vocabulary of {v}")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= v || l == blank) {
        return Err(Error::InvalidArgument(format!("label {bad} is blank or out of range")));
    }
    Ok(())
}

fn alpha(log_probs: &Tensor, ext: &[usize], blank: usize) -> Tensor {
    let t_len = log_probs.rows();
    let s_len = ext.len();
    let mut a = Tensor::filled(&[t_len, s_len], NEG_INF);
    a.set(0, 0, log_probs.get(0, ext[0]));
    if s_len > 1 {
        a.set(0, 1, log_probs.get(0, ext[1]));
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = a.get(t - 1, s);
            if s >= 1 {
                acc = log_add_exp(acc, a.get(t - 1, s - 1));
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] {
                acc = log_add_exp(acc, a.get(t - 1, s - 2));
            }
            if acc > NEG_INF {
                a.set(t, s, acc + log_probs.get(t, ext[s]));
            }
        }
    }
    a
}

fn total(a: &Tensor) -> f64 {
    let (t, s) = (a.rows() - 1, a.cols());
    if s == 1 {
        a.get(t, 0)
    } else {
        log_add_exp(a.get(t, s - 1), a.get(t, s - 2))
    }
}

/// Forward table for `labels`.
pub fn ctc_alpha(log_probs: &Tensor, labels: &[usize], blank: usize) -> Result<CtcTable> {
    validate(log_probs, labels, blank)?;
    let ext = extend_labels(labels, blank);
    let log_alpha = alpha(log_probs, &ext, blank);
    let log_likelihood = total(&log_alpha);
    Ok(CtcTable {
        log_alpha,
        log_likelihood,
    })
}

/// `−ln Σ_alignments P` for `labels`, blank id 0.
///
/// Fails with [`Error::InfeasibleAlignment`] when there are too few frames.
pub fn ctc_loss(log_probs: &Tensor, labels: &[usize]) -> Result<f64> {
    ctc_loss_with_blank(log_probs, labels, BLANK)
}

pub fn ctc_loss_with_blank(log_probs: &Tensor, labels: &[usize], blank: usize) -> Result<f64> {
    validate(log_probs, labels, blank)?;
    let required = min_frames(labels);
    if log_probs.rows() < required {
        return Err(Error::InfeasibleAlignment {
            frames: log_probs.rows(),
            labels: labels.len(),
            required,
        });
    }
    let table = ctc_alpha(log_probs, labels, blank)?;
    if !table.log_likelihood.is_finite() {
        return Err(Error::NonFinite("CTC likelihood".into()));
    }
    Ok(-table.log_likelihood)
}

/// Loss and its gradient with respect to every log-probability entry,
/// or `None` if the alignment is infeasible.
pub(crate) fn forward_backward(log_probs: &Tensor, labels: &[usize], blank: usize) -> Option<(f64, Tensor)> {
    let t_len = log_probs.rows();
    if t_len == 0 || t_len < min_frames(labels) {
        return None;
    }
    let ext = extend_labels(labels, blank);
    let s_len = ext.len();
    let a = alpha(log_probs, &ext, blank);
    let log_p = total(&a);
    if !log_p.is_finite() {
        return None;
    }
    // β_t(s): probability of completing the path after frame t, given state s at t.
    let mut b = Tensor::filled(&[t_len, s_len], NEG_INF);
    b.set(t_len - 1, s_len - 1, 0.0);
    if s_len > 1 {
        b.set(t_len - 1, s_len - 2, 0.0);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut acc = b.get(t + 1, s) + log_probs.get(t + 1, ext[s]);
            if s + 1 < s_len {
                acc = log_add_exp(acc, b.get(t + 1, s + 1) + log_probs.get(t + 1, ext[s + 1]));
            }
            if s + 2 < s_len && ext[s + 2] != blank && ext[s + 2] != ext[s] {
                acc = log_add_exp(acc, b.get(t + 1, s + 2) + log_probs.get(t + 1, ext[s + 2]));
            }
            b.set(t, s, acc);
        }
    }
    let mut grad = Tensor::zeros(log_probs.shape());
    for t in 0..t_len {
        for (s, &k) in ext.iter().enumerate() {
            let lp = a.get(t, s) + b.get(t, s);
            if lp > NEG_INF {
                let cur = grad.get(t, k);
                grad.set(t, k, cur - (lp - log_p).exp());
            }
        }
    }
    Some((-log_p, grad))
}

/// Incremental CTC prefix probabilities for label-synchronous beam search.
#[derive(Debug, Clone)]
pub struct CtcPrefixScorer<'a> {
    log_probs: &'a Tensor,
    blank: usize,
}

/// Forward variables of one hypothesis prefix.
#[derive(Debug, Clone)]
pub struct CtcPrefixState {
    /// `ln` probability of the prefix ending at frame `t` in a non-blank.
    r_nonblank: Vec<f64>,
    /// `ln` probability of the prefix ending at frame `t` in a blank.
    r_blank: Vec<f64>,
    last: Option<usize>,
    /// `ln` probability that the label sequence starts with this prefix.
    pub prefix_score: f64,
}

impl<'a> CtcPrefixScorer<'a> {
    pub fn new(log_probs: &'a Tensor, blank: usize) -> Self {
        Self { log_probs, blank }
    }

    pub fn frames(&self) -> usize {
        self.log_probs.rows()
    }

    pub fn initial(&self) -> CtcPrefixState {
        let mut r_blank = Vec::with_capacity(self.frames());
        let mut acc = 0.0;
        for t in 0..self.frames() {
            acc += self.log_probs.get(t, self.blank);
            r_blank.push(acc);
        }
        CtcPrefixState {
            r_nonblank: vec![NEG_INF; self.frames()],
            r_blank,
            last: None,
            prefix_score: 0.0,
        }
    }

    /// State of `prefix + [label]`.
    pub fn extend(&self, prev: &CtcPrefixState, label: usize) -> CtcPrefixState {
        let t_len = self.frames();
        let y = |t: usize, k: usize| self.log_probs.get(t, k);
        let mut r_n = vec![NEG_INF; t_len];
        let mut r_b = vec![NEG_INF; t_len];
        if prev.last.is_none() {
            r_n[0] = y(0, label);
        }
        let mut psi = r_n[0];
        for t in 1..t_len {
            let phi = if prev.last == Some(label) {
                prev.r_blank[t - 1]
            } else {
                log_add_exp(prev.r_blank[t - 1], prev.r_nonblank[t - 1])
            };
            r_n[t] = log_add_exp(r_n[t - 1], phi) + y(t, label);
            r_b[t] = log_add_exp(r_b[t - 1], r_n[t - 1]) + y(t, self.blank);
            psi = log_add_exp(psi, phi + y(t, label));
        }
        CtcPrefixState {
            r_nonblank: r_n,
            r_blank: r_b,
            last: Some(label),
            prefix_score: psi,
        }
    }

    /// `ln P(prefix is the whole label sequence)`.
    pub fn final_score(&self, state: &CtcPrefixState) -> f64 {
        let t = self.frames() - 1;
        log_add_exp(state.r_nonblank[t], state.r_blank[t])
    }
}

/// Viterbi alignment of `labels`: the first frame of each label in the single
/// most probable path. Ties prefer staying in the earlier state.
pub fn forced_align(log_probs: &Tensor, labels: &[usize], blank: usize) -> Result<Vec<usize>> {
    validate(log_probs, labels, blank)?;
    let t_len = log_probs.rows();
    if t_len < min_frames(labels) {
        return Err(Error::InfeasibleAlignment {
            frames: t_len,
            labels: labels.len(),
            required: min_frames(labels),
        });
    }
    let ext = extend_labels(labels, blank);
    let s_len = ext.len();
    let mut best = Tensor::filled(&[t_len, s_len], NEG_INF);
    let mut from = vec![0usize; t_len * s_len];
    best.set(0, 0, log_probs.get(0, ext[0]));
    if s_len > 1 {
        best.set(0, 1, log_probs.get(0, ext[1]));
        from[1] = 1;
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut arg = s;
            let mut v = best.get(t - 1, s);
            if s >= 1 && best.get(t - 1, s - 1) > v {
                arg = s - 1;
                v = best.get(t - 1, s - 1);
            }
            if s >= 2 && ext[s] != blank && ext[s] != ext[s - 2] && best.get(t - 1, s - 2) > v {
                arg = s - 2;
                v = best.get(t - 1, s - 2);
            }
            if v > NEG_INF {
                best.set(t, s, v + log_probs.get(t, ext[s]));
                from[t * s_len + s] = arg;
            }
        }
    }
    let last = t_len - 1;
    let mut s = if s_len > 1 && best.get(last, s_len - 2) > best.get(last, s_len - 1) {
        s_len - 2
    } else {
        s_len - 1
    };
    let mut states = vec![0; t_len];
    for t in (0..t_len).rev() {
        states[t] = s;
        if t > 0 {
            s = from[t * s_len + s];
        }
    }
    let mut onsets = Vec::with_capacity(labels.len());
    let mut prev = usize::MAX;
    for (t, &st) in states.iter().enumerate() {
        if st % 2 == 1 && st != prev {
            onsets.push(t);
        }
        prev = st;
    }
    Ok(onsets)
}

/// Collapse a frame-level path: merge repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Best-path decoding.
pub fn greedy_decode(log_probs: &Tensor, blank: usize) -> Vec<usize> {
    let path: Vec<usize> = (0..log_probs.rows()).map(|t| log_probs.argmax_row(t)).collect();
    collapse(&path, blank)
}

/// Log-probabilities from per-frame probabilities, for callers holding posteriors.
pub fn log_of(probs: &Tensor) -> Tensor {
    probs.map(f64::ln)
}

/// Normalises each row of raw scores into log-probabilities.
pub fn log_normalize(scores: &Tensor) -> Tensor {
    let mut out = scores.clone();
    for r in 0..out.rows() {
        let lse = log_sum_exp(out.row(r));
        out.row_mut(r).iter_mut().for_each(|x| *x -= lse);
    }
    out
}
