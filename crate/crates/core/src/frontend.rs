//! Speech features: framing, windowing, STFT magnitudes, Mel filterbank, log scaling.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SAMPLE_RATES: [u32; 3] = [8000, 16000, 32000];
/// Energy floor applied before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("audio clip".into()));
        }
        if !SAMPLE_RATES.contains(&sample_rate) {
            return Err(Error::InvalidArgument(format!(
                "sample rate {sample_rate} Hz not one of {SAMPLE_RATES:?}"
            )));
        }
        if let Some(s) = samples.iter().find(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!("sample {s} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads 16-bit PCM mono WAV.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let mut reader = hound::WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
            return Err(Error::format(
                path,
                format!(
                    "expected 16-bit PCM mono, got {} channel(s) of {}-bit {:?}",
                    spec.channels, spec.bits_per_sample, spec.sample_format
                ),
            ));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(samples, spec.sample_rate).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec)?;
        for s in &self.samples {
            w.write_sample((s * 32767.0).round() as i16)?;
        }
        w.finalize()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    /// No tapering; used to check spectra of constant signals.
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            // Periodic Hann.
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

pub fn ms_to_samples(ms: u32, sample_rate: u32) -> usize {
    (ms as u64 * sample_rate as u64 / 1000) as usize
}

/// `1 + ⌊(n − len)/hop⌋`, or zero when the signal is shorter than one frame.
pub fn frame_count(n: usize, len: usize, hop: usize) -> usize {
    if len == 0 || hop == 0 || n < len {
        0
    } else {
        1 + (n - len) / hop
    }
}

/// Hann-windowed frames.
pub fn frame_signal(clip: &AudioClip, frame_len_ms: u32, hop_ms: u32) -> Result<Vec<Vec<f64>>> {
    frame_signal_with(clip, frame_len_ms, hop_ms, Window::Hann)
}

pub fn frame_signal_with(clip: &AudioClip, frame_len_ms: u32, hop_ms: u32, window: Window) -> Result<Vec<Vec<f64>>> {
    let len = ms_to_samples(frame_len_ms, clip.sample_rate);
    let hop = ms_to_samples(hop_ms, clip.sample_rate);
    if len == 0 || hop == 0 {
        return Err(Error::InvalidArgument("frame length and hop must be positive".into()));
    }
    let n = clip.samples.len();
    if n < len {
        return Err(Error::InvalidArgument(format!(
            "clip of {n} samples is shorter than one {len}-sample frame"
        )));
    }
    let w = window.coefficients(len);
    Ok((0..frame_count(n, len, hop))
        .map(|f| clip.samples[f * hop..f * hop + len].iter().zip(&w).map(|(s, c)| s * c).collect())
        .collect())
}

/// Per-frame DFT magnitudes for bins `0..=n_fft/2`, frames zero-padded to `n_fft`.
pub fn stft_magnitude(frames: &[Vec<f64>], n_fft: usize) -> Result<Tensor> {
    if frames.is_empty() {
        return Err(Error::Empty("frames".into()));
    }
    let len = frames.iter().map(Vec::len).max().unwrap_or(0);
    if n_fft < len || n_fft == 0 {
        return Err(Error::InvalidArgument(format!("n_fft {n_fft} shorter than frame length {len}")));
    }
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut out = Tensor::zeros(&[frames.len(), bins]);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for (t, frame) in frames.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (b, &s) in buf.iter_mut().zip(frame) {
            b.re = s;
        }
        fft.process(&mut buf);
        for (k, c) in buf[..bins].iter().enumerate() {
            out.set(t, k, c.norm());
        }
    }
    Ok(out)
}

/// O(N²) DFT magnitudes of one frame; reference for [`stft_magnitude`].
pub fn naive_dft_magnitude(frame: &[f64], n_fft: usize) -> Vec<f64> {
    (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in frame.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * n % n_fft) as f64 / n_fft as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            re.hypot(im)
        })
        .collect()
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of `n_mels` filters evenly spaced on the Mel scale over `0..sr/2`.
pub fn mel_centers(sample_rate: u32, n_mels: usize) -> Vec<f64> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    (1..=n_mels)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// `n_mels × (n_fft/2+1)` triangular filters. A filter too narrow to cover
/// any bin falls back to its nearest bin so that no row is empty.
pub fn mel_filterbank(n_fft: usize, sample_rate: u32, n_mels: usize) -> Result<Tensor> {
    if n_mels < 2 {
        return Err(Error::InvalidArgument("n_mels must be at least 2".into()));
    }
    let bins = n_fft / 2 + 1;
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / n_fft as f64;
    let mut fb = Tensor::zeros(&[n_mels, bins]);
    for m in 0..n_mels {
        let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..bins {
            let f = k as f64 * bin_hz;
            let w = ((f - l) / (c - l)).min((r - f) / (r - c));
            if w > 0.0 {
                fb.set(m, k, w);
                any = true;
            }
        }
        if !any {
            let k = ((c / bin_hz).round() as usize).min(bins - 1);
            fb.set(m, k, 1.0);
        }
    }
    Ok(fb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Tensor,
    pub frame_len_ms: u32,
    pub hop_ms: u32,
}

impl FeatureSequence {
    pub fn new(frames: Tensor, frame_len_ms: u32, hop_ms: u32) -> Result<Self> {
        if frames.shape().len() != 2 || frames.rows() == 0 || frames.cols() == 0 {
            return Err(Error::Empty("feature frames".into()));
        }
        frames.ensure_finite("features")?;
        Ok(Self {
            frames,
            frame_len_ms,
            hop_ms,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.frames.rows() {
            let row: Vec<String> = self.frames.row(r).iter().map(|v| format!("{v}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// `u32` LE frame count and dimension, then row-major `f32` LE values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.frames.len());
        out.extend_from_slice(&(self.num_frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for v in self.frames.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        w.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Inverse of [`write_binary`](Self::write_binary); framing metadata is not stored.
    pub fn read_binary(path: &Path, frame_len_ms: u32, hop_ms: u32) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::format(path, "truncated header"));
        }
        let t = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
        let f = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        if bytes.len() != 8 + 4 * t * f {
            return Err(Error::format(path, format!("expected {t}×{f} values")));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        let frames = Tensor::matrix(t, f, data).map_err(|e| Error::format(path, e.to_string()))?;
        Self::new(frames, frame_len_ms, hop_ms).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Power spectrum (squared magnitudes) through the Mel filters, floored, natural log.
pub fn log_mel(stft: &Tensor, sample_rate: u32, n_mels: usize) -> Result<Tensor> {
    let bins = stft.cols();
    if bins < 2 {
        return Err(Error::InvalidArgument("spectrum needs at least two bins".into()));
    }
    let fb = mel_filterbank(2 * (bins - 1), sample_rate, n_mels)?;
    let mut out = Tensor::zeros(&[stft.rows(), n_mels]);
    for t in 0..stft.rows() {
        let row = stft.row(t);
        for m in 0..n_mels {
            let e: f64 = fb.row(m).iter().zip(row).map(|(w, x)| w * x * x).sum();
            out.set(t, m, e.max(LOG_FLOOR).ln());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FrontendConfig {
    pub frame_len_ms: u32,
    pub hop_ms: u32,
    pub n_mels: usize,
    #[serde(default)]
    pub window: Window,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 25,
            hop_ms: 10,
            n_mels: 40,
            window: Window::Hann,
        }
    }
}

impl FrontendConfig {
    pub fn n_fft(&self, sample_rate: u32) -> usize {
        ms_to_samples(self.frame_len_ms, sample_rate).next_power_of_two()
    }

    /// Full chain from waveform to log-Mel features.
    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureSequence> {
        let frames = frame_signal_with(clip, self.frame_len_ms, self.hop_ms, self.window)?;
        let mag = stft_magnitude(&frames, self.n_fft(clip.sample_rate))?;
        let mel = log_mel(&mag, clip.sample_rate, self.n_mels)?;
        FeatureSequence::new(mel, self.frame_len_ms, self.hop_ms)
    }
}

/// Per-dimension mean and standard deviation pooled over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(seqs: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for s in seqs {
            if sum.is_empty() {
                sum = vec![0.0; s.cols()];
                sq = vec![0.0; s.cols()];
            } else if s.cols() != sum.len() {
                return Err(Error::Shape("feature dimensions differ across corpus".into()));
            }
            for r in 0..s.rows() {
                for (c, v) in s.row(r).iter().enumerate() {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += s.rows();
        }
        if n == 0 {
            return Err(Error::Empty("feature corpus".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt().max(1e-5))
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, t: &Tensor) -> Tensor {
        let mut out = t.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, n: usize, sr: u32) -> AudioClip {
        AudioClip::new(
            (0..n).map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / sr as f64).sin()).collect(),
            sr,
        )
        .unwrap()
    }

    #[test]
    fn clip_validation() {
        assert!(AudioClip::new(vec![], 16000).is_err());
        assert!(AudioClip::new(vec![0.0], 44100).is_err());
        assert!(AudioClip::new(vec![1.5], 16000).is_err());
    }

    #[test]
    fn framing_examples() {
        let clip = AudioClip::new(vec![0.1; 400], 16000).unwrap();
        assert_eq!(frame_signal(&clip, 25, 10).unwrap().len(), 1);
        assert_eq!(frame_signal(&clip, 25, 10).unwrap()[0].len(), 400);
        let clip = AudioClip::new(vec![0.1; 480], 16000).unwrap();
        assert_eq!(frame_signal(&clip, 25, 10).unwrap().len(), 1);
        let clip = AudioClip::new(vec![0.1; 4000], 16000).unwrap();
        assert_eq!(frame_signal(&clip, 25, 10).unwrap().len(), 23);
        let short = AudioClip::new(vec![0.1; 399], 16000).unwrap();
        assert!(frame_signal(&short, 25, 10).is_err());
        assert_eq!(ms_to_samples(50, 32000), 1600);
    }

    #[test]
    fn frame_count_formula_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let len = rng.gen_range(1..300);
            let hop = rng.gen_range(1..200);
            let n = rng.gen_range(len..3000);
            let mut starts = 0;
            while starts * hop + len <= n {
                starts += 1;
            }
            assert_eq!(frame_count(n, len, hop), starts);
        }
    }

    #[test]
    fn spectrum_examples() {
        let zero = stft_magnitude(&[vec![0.0; 400]], 512).unwrap();
        assert!(zero.data().iter().all(|v| *v == 0.0));

        let dc = AudioClip::new(vec![1.0; 400], 16000).unwrap();
        let frames = frame_signal_with(&dc, 25, 10, Window::Rectangular).unwrap();
        let mag = stft_magnitude(&frames, 400).unwrap();
        assert!((mag.get(0, 0) - 400.0).abs() < 1e-9);
        assert!(mag.row(0)[1..].iter().all(|v| *v < 1e-9));

        let tone = sine(1000.0, 1600, 16000);
        let mag = stft_magnitude(&frame_signal(&tone, 25, 10).unwrap(), 512).unwrap();
        for t in 0..mag.rows() {
            assert_eq!(mag.argmax_row(t), 32);
        }
        assert!(stft_magnitude(&[vec![0.0; 400]], 256).is_err());
    }

    #[test]
    fn fft_matches_naive_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n_fft in [64, 100, 256] {
            let frame: Vec<f64> = (0..n_fft - 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = stft_magnitude(&[frame.clone()], n_fft).unwrap();
            let slow = naive_dft_magnitude(&frame, n_fft);
            for (a, b) in fast.row(0).iter().zip(&slow) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn filterbank_laws() {
        for sr in SAMPLE_RATES {
            let n_fft = FrontendConfig::default().n_fft(sr);
            let fb = mel_filterbank(n_fft, sr, 40).unwrap();
            for m in 0..40 {
                assert!(fb.row(m).iter().sum::<f64>() > 0.0);
            }
            if sr >= 16000 {
                for m in 0..39 {
                    assert!((0..fb.cols()).any(|k| fb.get(m, k) > 0.0 && fb.get(m + 1, k) > 0.0));
                }
            }
            let c = mel_centers(sr, 40);
            assert!(c.windows(2).all(|w| w[0] < w[1]));
        }
        assert!(mel_filterbank(512, 16000, 1).is_err());
    }

    #[test]
    fn log_mel_floor() {
        let z = log_mel(&Tensor::zeros(&[3, 257]), 16000, 40).unwrap();
        assert!(z.data().iter().all(|v| *v == LOG_FLOOR.ln()));
    }

    #[test]
    fn averaging_noise_trials_lowers_variance() {
        let cfg = FrontendConfig::default();
        let feats = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clip = AudioClip::new((0..1600).map(|_| rng.gen_range(-0.5..0.5)).collect(), 16000).unwrap();
            cfg.extract(&clip).unwrap().frames
        };
        let variance = |t: &Tensor| {
            let m = t.sum() / t.len() as f64;
            t.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / t.len() as f64
        };
        let single = feats(0);
        let mut mean = Tensor::zeros(single.shape());
        for s in 0..100 {
            mean.add_assign(&feats(s));
        }
        mean.scale_assign(0.01);
        assert!(variance(&mean) <= variance(&single));
    }

    #[test]
    fn extraction_shapes_and_io() {
        let clip = sine(440.0, 8000, 16000);
        let f = FrontendConfig::default().extract(&clip).unwrap();
        assert_eq!((f.num_frames(), f.dim()), (frame_count(8000, 400, 160), 40));

        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("f.bin");
        f.write_binary(&bin).unwrap();
        let back = FeatureSequence::read_binary(&bin, 25, 10).unwrap();
        assert!(back.frames.max_abs_diff(&f.frames) < 1e-4);
        assert_eq!(std::fs::metadata(&bin).unwrap().len() as usize, 8 + 4 * f.frames.len());

        let csv = dir.path().join("f.csv");
        f.write_csv(&csv).unwrap();
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), f.num_frames());
        assert_eq!(text.lines().next().unwrap().split(',').count(), 40);

        let wav = dir.path().join("a.wav");
        clip.write_wav(&wav).unwrap();
        let back = AudioClip::read_wav(&wav).unwrap();
        assert_eq!(back.sample_rate(), 16000);
        assert!(back.samples().iter().zip(clip.samples()).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn rejects_stereo_wav() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&p, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(AudioClip::read_wav(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn normalizer_standardises() {
        let a = Tensor::from_rows(&[vec![1.0, 10.0], vec![3.0, 10.0]]).unwrap();
        let n = Normalizer::fit([&a]).unwrap();
        let z = n.apply(&a);
        assert_eq!(z.row(0)[0], -1.0);
        assert_eq!(z.row(1)[0], 1.0);
        assert_eq!(z.row(0)[1], 0.0);
    }
}
