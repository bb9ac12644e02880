//! End-to-end experiment: corpus generation, feature synthesis, training,
//! cascaded evaluation and report assembly.
//!
//! Every command is a pure function of the config, the files it reads and the
//! seed. All artifacts live under `config.out`:
//!
//! ```text
//! corpus/{train,val,test}.jsonl
//! features/{train,val,test}.feats, features/manifest.json
//! models/{asr,recovery,nmt,vae}.ckpt, models/{which}_loss.csv
//! outputs/{route}.jsonl, traces/{route}.jsonl, reports/{route}.{csv,json}
//! ```

use std::fmt;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::asr::{
    AsrExample, AsrModel, AsrVariant, AttentionAsr, AttentionAsrConfig, BeamConfig, Charset, FeatureSynth, HybridAsr, HybridAsrConfig,
    SynthConfig,
};
use crate::checkpoint::Checkpoint;
use crate::corpusgen::{generate_corpus, read_jsonl, vae_generate, write_jsonl, BilingualLexicon, CorpusConfig, SwitchConfig, VaeConfig, VaeModel};
use crate::error::{Error, Result};
use crate::frontend::{ms_to_samples, FeatureSequence};
use crate::metrics::{BigramLm, EditCounts, EvalReport};
use crate::nmt::{write_translations, AttentionKind, NmtConfig, NmtModel};
use crate::numerics::{FitConfig, Tensor};
use crate::recovery::{write_recoveries, LanguageTagger, RecoveryConfig, RecoveryLm};
use crate::tokenizer::{build_vocab, casefold, Lang, TaggedSentence, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Toy,
    /// Source-scale geometry; defined for completeness, far too slow to train here.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::InvalidArgument(format!("unknown preset {s:?} (toy, paper)"))),
        }
    }
}

/// Optimiser schedule for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl TrainSettings {
    fn fit(&self, seed: u64) -> FitConfig {
        FitConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub switch: SwitchConfig,
    /// Tab-separated lexicon; the bundled one when absent.
    pub lexicon: Option<PathBuf>,
    pub sample_rate: u32,
    pub frame_len_ms: u32,
    pub hop_ms: u32,
    pub preset: Preset,
    pub asr_variant: AsrVariant,
    pub attention: AttentionKind,
    pub lambda: f64,
    pub beam: usize,
    /// Longest ASR transcript, in characters.
    pub max_chars: usize,
    /// Longest NMT output, in words.
    pub max_words: usize,
    pub synth: SynthConfig,
    pub max_pieces: usize,
    pub asr: TrainSettings,
    pub recovery: TrainSettings,
    pub nmt: TrainSettings,
    pub vae: TrainSettings,
    /// Steps per row of the loss CSV.
    pub log_every: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train: 6500,
            val: 500,
            test: 500,
            switch: SwitchConfig::default(),
            lexicon: None,
            sample_rate: 16000,
            frame_len_ms: 25,
            hop_ms: 10,
            preset: Preset::Toy,
            asr_variant: AsrVariant::Attention,
            attention: AttentionKind::Dot,
            lambda: 0.3,
            beam: 4,
            max_chars: 200,
            max_words: 40,
            synth: SynthConfig::default(),
            max_pieces: 2000,
            asr: TrainSettings {
                steps: 3000,
                batch: 8,
                lr: 3e-3,
            },
            recovery: TrainSettings {
                steps: 3000,
                batch: 16,
                lr: 1e-3,
            },
            nmt: TrainSettings {
                steps: 3000,
                batch: 16,
                lr: 3e-3,
            },
            vae: TrainSettings {
                steps: 2000,
                batch: 16,
                lr: 3e-3,
            },
            log_every: 10,
            out: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.test == 0 {
            return Err(Error::InvalidArgument("train and test splits must be non-empty".into()));
        }
        if ![8000, 16000, 32000].contains(&self.sample_rate) {
            return Err(Error::InvalidArgument(format!("sample rate {} not in 8000, 16000, 32000", self.sample_rate)));
        }
        if self.frame_len_ms == 0 || self.hop_ms == 0 {
            return Err(Error::InvalidArgument("frame length and hop must be positive".into()));
        }
        if self.asr_variant == AsrVariant::Hybrid && self.synth.frames_per_char < 8 {
            return Err(Error::InvalidArgument(format!(
                "the hybrid ASR subsamples 4x and needs frames-per-char >= 8, got {}",
                self.synth.frames_per_char
            )));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log-every must be positive".into()));
        }
        self.beam_config().validate()?;
        self.switch.validate()
    }

    /// Sets one field from a command-line value. `key` is the field name, or
    /// `parent-field` for a field of a nested section (`asr-steps`,
    /// `synth-noise`). The value is parsed as JSON, falling back to a string.
    pub fn apply_override(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let path = resolve_key(&doc, key).ok_or_else(|| Error::InvalidArgument(format!("unknown config field {key:?}")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut doc;
        for p in &path {
            slot = slot.get_mut(p.as_str()).expect("resolved path exists");
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::InvalidArgument(format!("--{key} {raw}: {e}")))?;
        Ok(())
    }

    /// Whether `key` names an overridable field.
    pub fn is_field(key: &str) -> bool {
        serde_json::to_value(Self::default()).ok().and_then(|d| resolve_key(&d, key)).is_some()
    }

    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam: self.beam,
            lambda: self.lambda,
            max_len: self.max_chars,
        }
    }

    pub fn paths(&self) -> Paths {
        Paths { root: self.out.clone() }
    }

    fn lexicon(&self) -> Result<BilingualLexicon> {
        match &self.lexicon {
            Some(p) => BilingualLexicon::load(p),
            None => Ok(BilingualLexicon::bundled()),
        }
    }

    fn recovery_config(&self) -> RecoveryConfig {
        match self.preset {
            Preset::Toy => RecoveryConfig::toy(),
            Preset::Paper => RecoveryConfig::paper(),
        }
    }

    fn nmt_config(&self) -> NmtConfig {
        match self.preset {
            Preset::Toy => NmtConfig::toy(self.attention),
            Preset::Paper => NmtConfig::paper(self.attention),
        }
    }

    fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            lr: self.vae.lr,
            batch: self.vae.batch,
            ..VaeConfig::default()
        }
    }
}

/// Object-key path for a flat `key`: an exact top-level field first, then
/// `section-field` splits at each hyphen.
fn resolve_key(doc: &Value, key: &str) -> Option<Vec<String>> {
    let obj = doc.as_object()?;
    if obj.contains_key(key) {
        return Some(vec![key.to_string()]);
    }
    for (i, _) in key.match_indices('-') {
        let (head, tail) = (&key[..i], &key[i + 1..]);
        if let Some(inner) = obj.get(head).filter(|v| v.is_object()) {
            if let Some(mut rest) = resolve_key(inner, tail) {
                rest.insert(0, head.to_string());
                return Some(rest);
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Val => "val",
            Self::Test => "test",
        }
    }
}

/// Artifact locations under one output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn corpus(&self, split: Split) -> PathBuf {
        self.root.join("corpus").join(format!("{}.jsonl", split.name()))
    }

    pub fn features(&self, split: Split) -> PathBuf {
        self.root.join("features").join(format!("{}.feats", split.name()))
    }

    pub fn feature_manifest(&self) -> PathBuf {
        self.root.join("features").join("manifest.json")
    }

    pub fn checkpoint(&self, which: Which) -> PathBuf {
        self.root.join("models").join(format!("{which}.ckpt"))
    }

    pub fn loss_csv(&self, which: Which) -> PathBuf {
        self.root.join("models").join(format!("{which}_loss.csv"))
    }

    pub fn report_csv(&self, system: &str) -> PathBuf {
        self.root.join("reports").join(format!("{system}.csv"))
    }

    pub fn report_json(&self, system: &str) -> PathBuf {
        self.root.join("reports").join(format!("{system}.json"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("reports").join("summary.csv")
    }

    pub fn trace(&self, route: Route) -> PathBuf {
        self.root.join("traces").join(format!("{route}.jsonl"))
    }

    pub fn output(&self, route: Route) -> PathBuf {
        self.root.join("outputs").join(format!("{route}.jsonl"))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Missing {
            what: what.to_string(),
            path: path.to_path_buf(),
        })
    }
}

fn read_split(cfg: &ExperimentConfig, split: Split) -> Result<Vec<TaggedSentence>> {
    let path = cfg.paths().corpus(split);
    require(&path, &format!("{} corpus (run generate)", split.name()))?;
    read_jsonl(&path)
}

/// Lowercased surface text an utterance is synthesized from.
pub fn utterance_text(s: &TaggedSentence) -> String {
    casefold(&s.text())
}

fn refs(corpus: &[TaggedSentence]) -> Result<Vec<Vec<String>>> {
    corpus
        .iter()
        .map(|s| s.mono_ref.clone().ok_or_else(|| Error::InvalidArgument(format!("sentence {:?} has no reference", s.text()))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<SplitCounts> {
    cfg.validate()?;
    let lex = cfg.lexicon()?;
    let corpus_cfg = CorpusConfig {
        train: cfg.train,
        val: cfg.val,
        test: cfg.test,
        switch: cfg.switch,
        seed: cfg.seed,
        ..CorpusConfig::default()
    };
    let splits = generate_corpus(&corpus_cfg, &lex)?;
    let paths = cfg.paths();
    for (split, data) in [(Split::Train, &splits.train), (Split::Val, &splits.val), (Split::Test, &splits.test)] {
        let p = paths.corpus(split);
        ensure_parent(&p)?;
        write_jsonl(&p, data)?;
    }
    let counts = SplitCounts {
        train: splits.train.len(),
        val: splits.val.len(),
        test: splits.test.len(),
    };
    info!("generated {counts:?}");
    Ok(counts)
}

/// What the ASR needs to interpret a feature archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FeatureManifest {
    pub sample_rate: u32,
    pub frame_len_ms: u32,
    pub hop_ms: u32,
    pub frame_len_samples: usize,
    pub synth: SynthConfig,
    pub charset: Charset,
    pub counts: Vec<(String, usize)>,
}

impl FeatureManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// `u32` LE count, then each sequence as [`FeatureSequence::to_bytes`].
pub fn write_feature_archive(path: &Path, seqs: &[FeatureSequence]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(&(seqs.len() as u32).to_le_bytes()).map_err(|e| Error::io(path, e))?;
    for s in seqs {
        w.write_all(&s.to_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_archive(path: &Path, frame_len_ms: u32, hop_ms: u32) -> Result<Vec<FeatureSequence>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let u32_at = |i: usize| -> Result<usize> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
            .ok_or_else(|| Error::format(path, "truncated archive"))
    };
    let n = u32_at(0)?;
    let mut pos = 4;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (t, f) = (u32_at(pos)?, u32_at(pos + 4)?);
        let end = pos + 8 + 4 * t * f;
        let body = bytes.get(pos + 8..end).ok_or_else(|| Error::format(path, "truncated archive"))?;
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        let frames = Tensor::matrix(t, f, data).map_err(|e| Error::format(path, e.to_string()))?;
        out.push(FeatureSequence::new(frames, frame_len_ms, hop_ms).map_err(|e| Error::format(path, e.to_string()))?);
        pos = end;
    }
    if pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(out)
}

/// Synthesizes one feature sequence per sentence of every split. Each split
/// draws its noise from its own seeded stream, in corpus order.
pub fn cmd_features(cfg: &ExperimentConfig) -> Result<FeatureManifest> {
    cfg.validate()?;
    let splits: Vec<(Split, Vec<TaggedSentence>)> = Split::ALL.iter().map(|&s| Ok((s, read_split(cfg, s)?))).collect::<Result<_>>()?;
    let texts: Vec<String> = splits.iter().flat_map(|(_, c)| c.iter().map(utterance_text)).collect();
    let charset = Charset::covering(texts.iter().map(String::as_str));
    let synth = FeatureSynth::new(cfg.synth, charset.clone())?;
    let paths = cfg.paths();
    let mut counts = Vec::new();
    for (i, (split, corpus)) in splits.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed_0000 + i as u64));
        let seqs = corpus
            .iter()
            .map(|s| {
                let f = synth.synthesize(&utterance_text(s), &mut rng)?;
                FeatureSequence::new(f.frames, cfg.frame_len_ms, cfg.hop_ms)
            })
            .collect::<Result<Vec<_>>>()?;
        let p = paths.features(*split);
        ensure_parent(&p)?;
        write_feature_archive(&p, &seqs)?;
        counts.push((split.name().to_string(), seqs.len()));
    }
    let manifest = FeatureManifest {
        sample_rate: cfg.sample_rate,
        frame_len_ms: cfg.frame_len_ms,
        hop_ms: cfg.hop_ms,
        frame_len_samples: ms_to_samples(cfg.frame_len_ms, cfg.sample_rate),
        synth: cfg.synth,
        charset,
        counts,
    };
    std::fs::write(paths.feature_manifest(), serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(paths.feature_manifest(), e))?;
    Ok(manifest)
}

fn read_features(cfg: &ExperimentConfig, split: Split) -> Result<(FeatureManifest, Vec<FeatureSequence>)> {
    let paths = cfg.paths();
    require(&paths.feature_manifest(), "feature manifest (run features)")?;
    let manifest = FeatureManifest::load(&paths.feature_manifest())?;
    let p = paths.features(split);
    require(&p, &format!("{} features (run features)", split.name()))?;
    let seqs = read_feature_archive(&p, manifest.frame_len_ms, manifest.hop_ms)?;
    Ok((manifest, seqs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    Asr,
    Recovery,
    Nmt,
    Vae,
}

impl Which {
    pub const ALL: [Which; 4] = [Which::Asr, Which::Recovery, Which::Nmt, Which::Vae];

    fn seed_offset(self) -> u64 {
        match self {
            Self::Asr => 1,
            Self::Recovery => 2,
            Self::Nmt => 3,
            Self::Vae => 4,
        }
    }
}

impl fmt::Display for Which {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Asr => "asr",
            Self::Recovery => "recovery",
            Self::Nmt => "nmt",
            Self::Vae => "vae",
        })
    }
}

impl FromStr for Which {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|w| w.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model {s:?} (asr, recovery, nmt, vae)")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "variant")]
enum AsrMeta {
    Attention { config: AttentionAsrConfig, charset: Charset },
    Hybrid { config: HybridAsrConfig, charset: Charset },
}

#[derive(Serialize, Deserialize)]
struct RecoveryMeta {
    config: RecoveryConfig,
    vocab: String,
}

#[derive(Serialize, Deserialize)]
struct NmtMeta {
    config: NmtConfig,
    src_vocab: String,
    tgt_vocab: String,
}

#[derive(Serialize, Deserialize)]
struct VaeMeta {
    config: VaeConfig,
    vocab: String,
}

pub fn asr_checkpoint(m: &AsrModel) -> Result<Checkpoint> {
    let meta = match m {
        AsrModel::Attention(a) => AsrMeta::Attention {
            config: a.config,
            charset: a.charset.clone(),
        },
        AsrModel::Hybrid(h) => AsrMeta::Hybrid {
            config: h.config,
            charset: h.charset.clone(),
        },
    };
    Checkpoint::from_store("asr", &meta, m.store())
}

pub fn asr_from_checkpoint(c: &Checkpoint) -> Result<AsrModel> {
    c.expect_kind("asr")?;
    let mut m = match c.meta_as::<AsrMeta>()? {
        AsrMeta::Attention { config, charset } => AsrModel::Attention(AttentionAsr::new(config, charset, 0)?),
        AsrMeta::Hybrid { config, charset } => AsrModel::Hybrid(HybridAsr::new(config, charset, 0)?),
    };
    c.restore(m.store_mut())?;
    Ok(m)
}

pub fn recovery_checkpoint(m: &RecoveryLm) -> Result<Checkpoint> {
    let meta = RecoveryMeta {
        config: m.config,
        vocab: m.vocab.to_text(),
    };
    Checkpoint::from_store("recovery", &meta, &m.store)
}

pub fn recovery_from_checkpoint(c: &Checkpoint) -> Result<RecoveryLm> {
    c.expect_kind("recovery")?;
    let meta: RecoveryMeta = c.meta_as()?;
    let mut m = RecoveryLm::new(meta.config, Vocab::from_text(&meta.vocab)?, 0)?;
    c.restore(&mut m.store)?;
    Ok(m)
}

pub fn nmt_checkpoint(m: &NmtModel) -> Result<Checkpoint> {
    let meta = NmtMeta {
        config: m.config,
        src_vocab: m.src_vocab.to_text(),
        tgt_vocab: m.tgt_vocab.to_text(),
    };
    Checkpoint::from_store("nmt", &meta, &m.store)
}

pub fn nmt_from_checkpoint(c: &Checkpoint) -> Result<NmtModel> {
    c.expect_kind("nmt")?;
    let meta: NmtMeta = c.meta_as()?;
    let mut m = NmtModel::with_vocabs(meta.config, Vocab::from_text(&meta.src_vocab)?, Vocab::from_text(&meta.tgt_vocab)?, 0)?;
    c.restore(&mut m.store)?;
    Ok(m)
}

pub fn vae_checkpoint(m: &VaeModel) -> Result<Checkpoint> {
    let meta = VaeMeta {
        config: m.config,
        vocab: m.vocab.to_text(),
    };
    Checkpoint::from_store("vae", &meta, &m.store)
}

pub fn vae_from_checkpoint(c: &Checkpoint) -> Result<VaeModel> {
    c.expect_kind("vae")?;
    let meta: VaeMeta = c.meta_as()?;
    let mut m = VaeModel::with_vocab(meta.config, Vocab::from_text(&meta.vocab)?, 0);
    c.restore(&mut m.store)?;
    Ok(m)
}

fn load_checkpoint(cfg: &ExperimentConfig, which: Which) -> Result<Checkpoint> {
    let p = cfg.paths().checkpoint(which);
    require(&p, &format!("{which} checkpoint (run train {which})"))?;
    Checkpoint::load(&p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub which: Which,
    pub steps: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub checkpoint: PathBuf,
}

/// `step,loss` with one row per `every` steps: the mean loss over that interval.
pub fn loss_csv(curve: &[f64], every: usize) -> String {
    let mut s = String::from("step,loss\n");
    for (i, chunk) in curve.chunks(every.max(1)).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        s.push_str(&format!("{},{mean:.6}\n", i * every.max(1) + chunk.len()));
    }
    s
}

pub fn cmd_train(cfg: &ExperimentConfig, which: Which) -> Result<TrainSummary> {
    cfg.validate()?;
    let seed = cfg.seed.wrapping_add(which.seed_offset());
    let train = read_split(cfg, Split::Train)?;
    let (ckpt, curve) = match which {
        Which::Asr => {
            let (manifest, feats) = read_features(cfg, Split::Train)?;
            if feats.len() != train.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} training utterances for {} sentences; rerun features",
                    feats.len(),
                    train.len()
                )));
            }
            let charset = manifest.charset.clone();
            let data = train
                .iter()
                .zip(feats)
                .map(|(s, f)| {
                    Ok(AsrExample {
                        feats: f.frames,
                        labels: charset.encode(&utterance_text(s))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let dim = manifest.synth.dim;
            let mut model = match (cfg.asr_variant, cfg.preset) {
                (AsrVariant::Attention, Preset::Toy) => AsrModel::Attention(AttentionAsr::new(AttentionAsrConfig::toy(dim), charset, seed)?),
                (AsrVariant::Attention, Preset::Paper) => AsrModel::Attention(AttentionAsr::new(AttentionAsrConfig::paper(dim), charset, seed)?),
                (AsrVariant::Hybrid, Preset::Toy) => AsrModel::Hybrid(HybridAsr::new(HybridAsrConfig::toy(dim), charset, seed)?),
                (AsrVariant::Hybrid, Preset::Paper) => AsrModel::Hybrid(HybridAsr::new(HybridAsrConfig::paper(dim), charset, seed)?),
            };
            let curve = model.train(&data, cfg.asr.fit(seed))?;
            (asr_checkpoint(&model)?, curve)
        }
        Which::Recovery => {
            let vocab = build_vocab(&train, cfg.max_pieces)?;
            let mut model = RecoveryLm::new(cfg.recovery_config(), vocab, seed)?;
            let curve = model.train(&train, cfg.recovery.fit(seed))?;
            (recovery_checkpoint(&model)?, curve)
        }
        Which::Nmt => {
            let mut model = NmtModel::new(cfg.nmt_config(), &train, seed)?;
            let curve = model.train(&train, cfg.nmt.fit(seed))?;
            (nmt_checkpoint(&model)?, curve)
        }
        Which::Vae => {
            let mut model = VaeModel::new(cfg.vae_config(), &train, seed)?;
            let curve = model.train(&train, cfg.vae.steps, seed)?;
            let samples = vae_generate(&model, 20, seed)?;
            let p = cfg.paths().root.join("models").join("vae_samples.jsonl");
            ensure_parent(&p)?;
            write_jsonl(&p, &samples)?;
            (vae_checkpoint(&model)?, curve)
        }
    };
    let paths = cfg.paths();
    let p = paths.checkpoint(which);
    ensure_parent(&p)?;
    ckpt.save(&p)?;
    let csv = paths.loss_csv(which);
    std::fs::write(&csv, loss_csv(&curve, cfg.log_every)).map_err(|e| Error::io(&csv, e))?;
    let summary = TrainSummary {
        which,
        steps: curve.len(),
        first_loss: curve.first().copied().unwrap_or(f64::NAN),
        final_loss: curve.last().copied().unwrap_or(f64::NAN),
        checkpoint: p,
    };
    info!("trained {which}: {summary:?}");
    Ok(summary)
}

/// Where the code-switched text comes from, and how it is made monolingual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Route {
    AsrBert,
    AsrNmt,
    TextBert,
    TextNmt,
}

impl Route {
    pub const ALL: [Route; 4] = [Route::AsrBert, Route::AsrNmt, Route::TextBert, Route::TextNmt];

    pub fn uses_asr(self) -> bool {
        matches!(self, Self::AsrBert | Self::AsrNmt)
    }

    pub fn uses_nmt(self) -> bool {
        matches!(self, Self::AsrNmt | Self::TextNmt)
    }

    /// The same recovery stage fed with reference text.
    pub fn direct(self) -> Route {
        match self {
            Self::AsrBert | Self::TextBert => Self::TextBert,
            Self::AsrNmt | Self::TextNmt => Self::TextNmt,
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AsrBert => "asr+bert",
            Self::AsrNmt => "asr+nmt",
            Self::TextBert => "text+bert",
            Self::TextNmt => "text+nmt",
        })
    }
}

impl FromStr for Route {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown route {s:?} (asr+bert, asr+nmt, text+bert, text+nmt)")))
    }
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    index: usize,
    frames: Option<usize>,
    cs_reference: String,
    cs_text: String,
    recovered: &'a [String],
    reference: &'a [String],
    edits: &'a EditCounts,
}

enum Recoverer {
    Bert(RecoveryLm, LanguageTagger),
    Nmt(NmtModel),
}

/// Runs one route over the test split and writes its report, trace and outputs.
pub fn cmd_pipeline(cfg: &ExperimentConfig, route: Route) -> Result<EvalReport> {
    cfg.validate()?;
    let train = read_split(cfg, Split::Train)?;
    let test = read_split(cfg, Split::Test)?;
    let references = refs(&test)?;
    let target_words: Vec<String> = refs(&train)?.into_iter().flatten().collect();
    let lm = BigramLm::fit(&refs(&train)?)?;

    let recoverer = if route.uses_nmt() {
        Recoverer::Nmt(nmt_from_checkpoint(&load_checkpoint(cfg, Which::Nmt)?)?)
    } else {
        let tagger = LanguageTagger::new(Lang::L1, target_words.iter().map(String::as_str));
        Recoverer::Bert(recovery_from_checkpoint(&load_checkpoint(cfg, Which::Recovery)?)?, tagger)
    };

    // Code-switched input: reference text, or ASR transcripts of the test audio.
    let (inputs, frames): (Vec<Option<TaggedSentence>>, Vec<Option<usize>>) = if route.uses_asr() {
        let asr = asr_from_checkpoint(&load_checkpoint(cfg, Which::Asr)?)?;
        let (_, feats) = read_features(cfg, Split::Test)?;
        if feats.len() != test.len() {
            return Err(Error::InvalidArgument(format!("{} test utterances for {} sentences; rerun features", feats.len(), test.len())));
        }
        let beam = cfg.beam_config();
        let mut inputs = Vec::with_capacity(test.len());
        let mut frames = Vec::with_capacity(test.len());
        for f in &feats {
            let text = asr.transcribe(&f.frames, &beam)?;
            let words: Vec<&str> = text.split_whitespace().collect();
            let tagged = match &recoverer {
                _ if words.is_empty() => None,
                Recoverer::Bert(_, tagger) => Some(tagger.tag(&words)?),
                Recoverer::Nmt(_) => Some(TaggedSentence::monolingual(&words, Lang::L1)?),
            };
            inputs.push(tagged);
            frames.push(Some(f.num_frames()));
        }
        (inputs, frames)
    } else {
        (test.iter().cloned().map(Some).collect(), vec![None; test.len()])
    };

    let hyps = inputs
        .iter()
        .map(|s| match (s, &recoverer) {
            (None, _) => Ok(Vec::new()),
            (Some(s), Recoverer::Bert(lm, _)) => lm.recover(s, Lang::L1),
            (Some(s), Recoverer::Nmt(m)) => m.translate_sentence(s, cfg.max_words),
        })
        .collect::<Result<Vec<_>>>()?;

    let name = route.to_string();
    let report = EvalReport::evaluate(&name, &hyps, &references, &lm)?;
    let paths = cfg.paths();

    let trace_path = paths.trace(route);
    ensure_parent(&trace_path)?;
    let mut w = BufWriter::new(std::fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?);
    for (i, s) in test.iter().enumerate() {
        let rec = TraceRecord {
            index: i,
            frames: frames[i],
            cs_reference: s.text(),
            cs_text: inputs[i].as_ref().map(TaggedSentence::text).unwrap_or_default(),
            recovered: &hyps[i],
            reference: &references[i],
            edits: &report.edits[i],
        };
        writeln!(w, "{}", serde_json::to_string(&rec)?).map_err(|e| Error::io(&trace_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&trace_path, e))?;

    let out_path = paths.output(route);
    ensure_parent(&out_path)?;
    let rows: Vec<(TaggedSentence, Vec<String>)> = inputs
        .iter()
        .zip(&hyps)
        .filter_map(|(s, h)| s.clone().map(|s| (s, h.clone())))
        .collect();
    match recoverer {
        Recoverer::Bert(..) => write_recoveries(&out_path, &rows)?,
        Recoverer::Nmt(_) => write_translations(&out_path, &rows)?,
    }

    write_report(cfg, &report)?;
    info!("{}", report.csv_row());
    Ok(report)
}

fn write_report(cfg: &ExperimentConfig, report: &EvalReport) -> Result<()> {
    let paths = cfg.paths();
    let csv = paths.report_csv(&report.system);
    ensure_parent(&csv)?;
    EvalReport::write_csv(std::slice::from_ref(report), &csv)?;
    report.write_json(&paths.report_json(&report.system))
}

/// One hypothesis per line: a JSON array of words, an object with a
/// `recovered`, `translation` or `hypothesis` array, or plain text.
pub fn parse_hypothesis_line(line: &str) -> Result<Vec<String>> {
    let words = |v: &Value| -> Option<Vec<String>> { v.as_array()?.iter().map(|w| w.as_str().map(str::to_string)).collect() };
    match serde_json::from_str::<Value>(line) {
        Ok(v @ Value::Array(_)) => words(&v),
        Ok(Value::Object(o)) => ["recovered", "translation", "hypothesis"].iter().find_map(|k| o.get(*k).and_then(words)),
        _ => Some(line.split_whitespace().map(str::to_string).collect()),
    }
    .ok_or_else(|| Error::InvalidArgument(format!("unreadable hypothesis line {line:?}")))
}

/// Scores a hypothesis file against the test references.
pub fn cmd_eval(cfg: &ExperimentConfig, hyp_path: &Path, system: &str) -> Result<EvalReport> {
    let train = read_split(cfg, Split::Train)?;
    let test = read_split(cfg, Split::Test)?;
    let text = std::fs::read_to_string(hyp_path).map_err(|e| Error::io(hyp_path, e))?;
    let hyps = text.lines().map(parse_hypothesis_line).collect::<Result<Vec<_>>>()?;
    if hyps.len() != test.len() {
        return Err(Error::format(hyp_path, format!("{} hypotheses for {} test sentences", hyps.len(), test.len())));
    }
    let lm = BigramLm::fit(&refs(&train)?)?;
    let report = EvalReport::evaluate(system, &hyps, &refs(&test)?, &lm)?;
    write_report(cfg, &report)?;
    Ok(report)
}

/// Collects the per-route reports into `reports/summary.csv` and renders a
/// table with the cascaded-versus-direct comparison.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let paths = cfg.paths();
    let mut rows = Vec::new();
    for r in Route::ALL {
        let p = paths.report_csv(&r.to_string());
        if p.exists() {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            rows.extend(EvalReport::from_csv(&text).map_err(|e| Error::format(&p, e.to_string()))?);
        }
    }
    if rows.is_empty() {
        return Err(Error::Missing {
            what: "route reports (run pipeline)".into(),
            path: paths.root.join("reports"),
        });
    }
    EvalReport::write_csv(&rows, &paths.summary())?;
    let mut out = format!("{:<10} {:>8} {:>10} {:>7} {:>5}\n", "system", "WER%", "PPL", "BLEU", "n");
    for r in &rows {
        out.push_str(&format!("{:<10} {:>8.2} {:>10.3} {:>7.4} {:>5}\n", r.system, r.wer_percent, r.ppl, r.bleu, r.n_sentences));
    }
    let find = |r: Route| rows.iter().find(|x| x.system == r.to_string());
    for cascaded in [Route::AsrBert, Route::AsrNmt] {
        if let (Some(c), Some(d)) = (find(cascaded), find(cascaded.direct())) {
            out.push_str(&format!(
                "{cascaded} vs {}: {:+.2} WER points\n",
                cascaded.direct(),
                c.wer_percent - d.wer_percent
            ));
        }
    }
    Ok(out)
}

/// Runs generate, features, all trainings and every route in sequence.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<EvalReport>> {
    cmd_generate(cfg)?;
    cmd_features(cfg)?;
    for w in [Which::Asr, Which::Recovery, Which::Nmt] {
        cmd_train(cfg, w)?;
    }
    Route::ALL.into_iter().map(|r| cmd_pipeline(cfg, r)).collect()
}
