//! Character inventory and the synthetic acoustic proxy used in place of audio.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ctc::BLANK;
use crate::error::{Error, Result};
use crate::frontend::FeatureSequence;
use crate::numerics::Tensor;

/// Start-of-sequence input and end-of-sequence output share one id.
pub const EOS_CHAR: usize = 1;

/// Output units of the ASR models: blank, end marker, then characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Charset {
    chars: Vec<char>,
}

impl Charset {
    /// Space plus `a..=z`.
    pub fn latin() -> Self {
        Self {
            chars: std::iter::once(' ').chain('a'..='z').collect(),
        }
    }

    /// [`latin`](Self::latin) extended by any other character occurring in `texts`.
    pub fn covering<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: BTreeSet<char> = Self::latin().chars.into_iter().collect();
        for t in texts {
            set.extend(t.chars());
        }
        Self {
            chars: set.into_iter().collect(),
        }
    }

    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        let set: BTreeSet<char> = chars.iter().copied().collect();
        if set.len() != chars.len() {
            return Err(Error::InvalidArgument("duplicate characters in charset".into()));
        }
        Ok(Self { chars })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Number of output units including blank and end marker.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.chars.iter().position(|&x| x == c).map(|i| i + 2)
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| self.id(c).ok_or_else(|| Error::InvalidArgument(format!("character {c:?} not in charset"))))
            .collect()
    }

    /// Inverse of [`encode`](Self::encode); blank and end marker are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != BLANK && i != EOS_CHAR)
            .filter_map(|&i| self.chars.get(i - 2))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthConfig {
    pub frames_per_char: usize,
    pub dim: usize,
    /// Standard deviation of the additive per-utterance noise.
    pub noise: f64,
    /// Seed of the fixed character templates, shared by every utterance.
    pub template_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames_per_char: 3,
            dim: 40,
            noise: 0.3,
            template_seed: 1234,
        }
    }
}

/// Maps text to feature frames: a fixed `frames_per_char × dim` Gaussian
/// template per character, concatenated, plus fresh noise.
#[derive(Debug, Clone)]
pub struct FeatureSynth {
    pub config: SynthConfig,
    pub charset: Charset,
    templates: Vec<Tensor>,
}

impl FeatureSynth {
    pub fn new(config: SynthConfig, charset: Charset) -> Result<Self> {
        if config.frames_per_char == 0 || config.dim == 0 {
            return Err(Error::InvalidArgument("synth frames_per_char and dim must be positive".into()));
        }
        if !(config.noise >= 0.0 && config.noise.is_finite()) {
            return Err(Error::InvalidArgument(format!("synth noise {} must be finite and >= 0", config.noise)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.template_seed);
        let n = config.frames_per_char * config.dim;
        let templates = (0..charset.chars().len())
            .map(|_| {
                let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                Tensor::matrix(config.frames_per_char, config.dim, data).expect("template shape")
            })
            .collect();
        Ok(Self {
            config,
            charset,
            templates,
        })
    }

    /// Noise-free frames of `text`.
    pub fn clean(&self, text: &str) -> Result<Tensor> {
        let ids = self.charset.encode(text)?;
        if ids.is_empty() {
            return Err(Error::Empty("utterance text".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * self.config.frames_per_char * self.config.dim);
        for id in ids {
            data.extend_from_slice(self.templates[id - 2].data());
        }
        Tensor::matrix(data.len() / self.config.dim, self.config.dim, data)
    }

    pub fn synthesize(&self, text: &str, rng: &mut impl Rng) -> Result<FeatureSequence> {
        let mut t = self.clean(text)?;
        if self.config.noise > 0.0 {
            for x in t.data_mut() {
                *x += self.config.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        FeatureSequence::new(t, 25, 10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charset_round_trip() {
        let cs = Charset::latin();
        assert_eq!(cs.len(), 29);
        let ids = cs.encode("main ghar").unwrap();
        assert!(ids.iter().all(|&i| i >= 2));
        assert_eq!(cs.decode(&ids), "main ghar");
        assert!(cs.encode("Ä").is_err());
        assert_eq!(cs.decode(&[0, EOS_CHAR]), "");
    }

    #[test]
    fn covering_adds_unseen_characters() {
        let cs = Charset::covering(["don't"]);
        assert!(cs.id('\'').is_some());
        assert_eq!(cs.len(), 30);
    }

    #[test]
    fn synth_shapes_and_determinism() {
        let cfg = SynthConfig {
            dim: 5,
            ..Default::default()
        };
        let s = FeatureSynth::new(cfg, Charset::latin()).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = s.synthesize("ab a", &mut r1).unwrap();
        let b = s.synthesize("ab a", &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_frames(), 12);
        assert_eq!(a.dim(), 5);
        // Same character, same template.
        let clean = s.clean("ab a").unwrap();
        assert_eq!(clean.slice_rows(0, 3), clean.slice_rows(9, 3));
        assert_ne!(clean.slice_rows(0, 3), clean.slice_rows(3, 3));
        assert!(s.synthesize("", &mut r1).is_err());
    }
}
