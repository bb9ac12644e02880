//! Code-switched speech to code-switched text.
//!
//! Variant A ([`AttentionAsr`]) is a BiLSTM attention encoder-decoder. Variant B
//! ([`HybridAsr`]) subsamples with strided convolutions, encodes with
//! self-attention, and decodes jointly with CTC using triggered attention.

pub mod ctc;
mod attention_asr;
mod data;
mod decode;
mod hybrid;

use serde::{Deserialize, Serialize};

pub use attention_asr::{AttentionAsr, AttentionAsrConfig, AttentionAsrDecoding, AttentionAsrNet, DecoderState, Encoded};
pub use ctc::{ctc_loss, forced_align, CtcPrefixScorer, CtcTable, BLANK};
pub use data::{Charset, FeatureSynth, SynthConfig, EOS_CHAR};
pub use decode::{joint_beam_search, rank_candidates, trigger_truncate, AttentionDecoder, BeamConfig, TriggerWindows};
pub use hybrid::{HybridAsr, HybridAsrConfig, HybridAsrNet};

use crate::error::{Error, Result};
use crate::metrics::{cer, EditCounts};
use crate::numerics::{FitConfig, ParamStore, Tensor};

/// One training utterance: `T×F` features and character ids (no end marker).
#[derive(Debug, Clone, PartialEq)]
pub struct AsrExample {
    pub feats: Tensor,
    pub labels: Vec<usize>,
}

impl AsrExample {
    /// Errors when CTC cannot align the labels after `subsample`× frame reduction.
    pub fn check_feasible(&self, subsample: usize) -> Result<()> {
        let frames = subsampled_len(self.feats.rows(), subsample);
        let required = ctc::min_frames(&self.labels);
        if frames < required {
            return Err(Error::InfeasibleAlignment {
                frames,
                labels: self.labels.len(),
                required,
            });
        }
        Ok(())
    }
}

/// Frames left after `factor`× reduction by stride-2 convolutions with padding 1.
pub fn subsampled_len(frames: usize, factor: usize) -> usize {
    let mut t = frames;
    let mut f = factor;
    while f > 1 {
        t = t.div_ceil(2);
        f /= 2;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AsrVariant {
    #[default]
    Attention,
    Hybrid,
}

/// Either ASR variant behind one interface.
#[derive(Debug, Clone)]
pub enum AsrModel {
    Attention(AttentionAsr),
    Hybrid(HybridAsr),
}

impl AsrModel {
    pub fn variant(&self) -> AsrVariant {
        match self {
            Self::Attention(_) => AsrVariant::Attention,
            Self::Hybrid(_) => AsrVariant::Hybrid,
        }
    }

    pub fn charset(&self) -> &Charset {
        match self {
            Self::Attention(m) => &m.charset,
            Self::Hybrid(m) => &m.charset,
        }
    }

    pub fn store(&self) -> &ParamStore {
        match self {
            Self::Attention(m) => &m.store,
            Self::Hybrid(m) => &m.store,
        }
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            Self::Attention(m) => &mut m.store,
            Self::Hybrid(m) => &mut m.store,
        }
    }

    pub fn train(&mut self, data: &[AsrExample], cfg: FitConfig) -> Result<Vec<f64>> {
        match self {
            Self::Attention(m) => m.train(data, cfg),
            Self::Hybrid(m) => m.train(data, cfg),
        }
    }

    /// Joint CTC/attention decoding to character ids.
    pub fn joint_decode(&self, feats: &Tensor, cfg: &BeamConfig) -> Result<Vec<usize>> {
        match self {
            Self::Attention(m) => m.joint_decode(feats, cfg),
            Self::Hybrid(m) => m.joint_decode(feats, cfg),
        }
    }

    pub fn transcribe(&self, feats: &Tensor, cfg: &BeamConfig) -> Result<String> {
        Ok(self.charset().decode(&self.joint_decode(feats, cfg)?))
    }
}

/// Pooled character edit counts of `model` over `(features, reference text)` pairs.
pub fn character_errors(model: &AsrModel, data: &[(Tensor, String)], cfg: &BeamConfig) -> Result<EditCounts> {
    let mut total = EditCounts::default();
    for (feats, text) in data {
        total.merge(&cer(&model.transcribe(feats, cfg)?, text)?);
    }
    Ok(total)
}
