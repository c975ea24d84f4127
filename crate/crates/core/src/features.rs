//! Log mel-filterbank ("fbank") features, one frame per network timestep.
//!
//! Pipeline per frame: take `window_len` raw samples (no pre-emphasis, no dithering),
//! apply a symmetric Hamming window, zero-pad to `n_fft`, take the power spectrum,
//! project onto triangular mel filters and apply `ln(max(x, log_floor))`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FbankConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop_len: usize,
    pub n_filters: usize,
    pub n_fft: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
    /// Per-utterance mean/variance normalization of each filter channel. Off by default:
    /// it needs the whole utterance, so it is not causal.
    pub normalize: bool,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16000,
            window_len: 400,
            hop_len: 160,
            n_filters: 40,
            n_fft: 512,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-10,
            normalize: false,
        }
    }
}

impl FbankConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("features: {m}")));
        if self.sample_rate == 0 || self.window_len == 0 || self.hop_len == 0 {
            return fail("sample_rate, window_len and hop_len must be positive".into());
        }
        if self.window_len > self.n_fft {
            return fail(format!(
                "window_len {} exceeds n_fft {}",
                self.window_len, self.n_fft
            ));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return fail(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin, self.fmax
            ));
        }
        if self.n_filters == 0 {
            return fail("n_filters must be >= 1".into());
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return fail(format!("log_floor must be positive, got {}", self.log_floor));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of frames produced for `n_samples` of audio (0 if shorter than one window).
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window_len {
            0
        } else {
            1 + (n_samples - self.window_len) / self.hop_len
        }
    }

    /// Time in seconds up to which frame `frame` (1-based) has seen audio.
    pub fn frame_coverage_end(&self, frame: usize) -> f64 {
        let last_sample = (frame.saturating_sub(1)) * self.hop_len + self.window_len;
        last_sample as f64 / self.sample_rate as f64
    }

    /// Smallest 1-based frame whose coverage includes `seconds`, clamped to `[1, n_frames]`.
    pub fn seconds_to_frame(&self, seconds: f64, n_frames: usize) -> usize {
        let samples = seconds * self.sample_rate as f64;
        let beyond_first = samples - self.window_len as f64;
        let frame = if beyond_first <= 0.0 {
            1
        } else {
            (beyond_first / self.hop_len as f64).ceil() as usize + 1
        };
        frame.clamp(1, n_frames.max(1))
    }
}

/// T×F log filterbank energies; row t drives network timestep t.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(frames: Array2<f64>) -> Self {
        Self { frames }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn width(&self) -> usize {
        self.frames.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.frames.row(t)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters, one per row, over the `n_fft/2 + 1` power-spectrum bins.
///
/// Filter edges are mel-spaced and the triangles are evaluated at the exact bin
/// frequencies, so adjacent filters overlap and each column sums to at most 1.
pub fn mel_filterbank(config: &FbankConfig) -> Result<Array2<f64>> {
    config.validate()?;
    let n_bins = config.n_bins();
    let bin_hz = |k: usize| k as f64 * config.sample_rate as f64 / config.n_fft as f64;

    let bins_in_range = (0..n_bins)
        .filter(|&k| (config.fmin..=config.fmax).contains(&bin_hz(k)))
        .count();
    if config.n_filters > bins_in_range {
        return Err(Error::Config(format!(
            "features: {} filters requested but only {} FFT bins lie in [{}, {}] Hz",
            config.n_filters, bins_in_range, config.fmin, config.fmax
        )));
    }

    let (mel_lo, mel_hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let step = (mel_hi - mel_lo) / (config.n_filters + 1) as f64;
    let edges: Vec<f64> = (0..config.n_filters + 2)
        .map(|i| mel_to_hz(mel_lo + step * i as f64))
        .collect();

    let mut bank = Array2::zeros((config.n_filters, n_bins));
    for (m, mut row) in bank.axis_iter_mut(Axis(0)).enumerate() {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz(k);
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            *w = rising.min(falling).max(0.0);
        }
        if row.sum() <= 0.0 {
            return Err(Error::Config(format!(
                "features: mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; \
                 reduce n_filters or increase n_fft"
            )));
        }
    }
    Ok(bank)
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Reusable extractor: holds the FFT plan, window and filterbank.
#[derive(Clone)]
pub struct FbankExtractor {
    config: FbankConfig,
    window: Vec<f64>,
    bank: Array2<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FbankExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FbankExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl FbankExtractor {
    pub fn new(config: FbankConfig) -> Result<Self> {
        let bank = mel_filterbank(&config)?;
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Ok(Self {
            window: hamming(config.window_len),
            bank,
            fft,
            config,
        })
    }

    pub fn config(&self) -> &FbankConfig {
        &self.config
    }

    pub fn compute(&self, audio: &[f64]) -> Result<FeatureMatrix> {
        let cfg = &self.config;
        if audio.len() < cfg.window_len {
            return Err(Error::AudioTooShort {
                len: audio.len(),
                min: cfg.window_len,
            });
        }
        if let Some(i) = audio.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("audio sample {i}")));
        }

        let n_frames = cfg.n_frames(audio.len());
        let n_bins = cfg.n_bins();
        let floor_log = cfg.log_floor.ln();
        let mut out = Array2::zeros((n_frames, cfg.n_filters));
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
        let mut power = vec![0.0; n_bins];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];

        for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let start = t * cfg.hop_len;
            let frame = &audio[start..start + cfg.window_len];
            for (slot, (&x, &w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *slot = Complex::new(x * w, 0.0);
            }
            buf[cfg.window_len..].fill(Complex::new(0.0, 0.0));
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, v) in row.iter_mut().enumerate() {
                let energy: f64 = self
                    .bank
                    .row(m)
                    .iter()
                    .zip(&power)
                    .map(|(w, p)| w * p)
                    .sum();
                *v = if energy > cfg.log_floor {
                    energy.ln()
                } else {
                    floor_log
                };
            }
        }

        if cfg.normalize {
            normalize_utterance(&mut out);
        }
        Ok(FeatureMatrix::new(out))
    }
}

/// Zero-mean, unit-variance per channel over the utterance. Constant channels are only centered.
pub fn normalize_utterance(frames: &mut Array2<f64>) {
    let n = frames.nrows() as f64;
    for mut col in frames.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 1e-20 { var.sqrt().recip() } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) * scale);
    }
}

/// Per-channel mean and standard deviation estimated on a training set. Applying them
/// is a fixed affine map per frame, so streaming inference stays causal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    /// Pools every frame of `set`. Channels with (near) zero spread get unit scale.
    pub fn fit(set: &[&FeatureMatrix]) -> Result<Self> {
        let width = set.first().map(|m| m.width()).ok_or_else(|| {
            Error::Config("feature statistics need at least one utterance".into())
        })?;
        let mut sum = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let mut n = 0usize;
        for m in set {
            if m.width() != width {
                return Err(Error::Dimension {
                    context: "feature statistics",
                    expected: width,
                    got: m.width(),
                });
            }
            for row in m.frames.rows() {
                for (j, &v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            n += m.n_frames();
        }
        if n == 0 {
            return Err(Error::Config("feature statistics need at least one frame".into()));
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: &mut FeatureMatrix) -> Result<()> {
        if features.width() != self.mean.len() {
            return Err(Error::Dimension {
                context: "feature statistics",
                expected: self.mean.len(),
                got: features.width(),
            });
        }
        for mut row in features.frames.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        Ok(())
    }
}

/// One-shot feature extraction; prefer [`FbankExtractor`] when processing many clips.
pub fn compute_fbank(audio: &[f64], config: &FbankConfig) -> Result<FeatureMatrix> {
    FbankExtractor::new(config.clone())?.compute(audio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Scalar-loop mel filter construction, kept independent of the vectorised one.
    fn reference_bank(cfg: &FbankConfig) -> Vec<Vec<f64>> {
        let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
        let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
        let lo = mel(cfg.fmin);
        let hi = mel(cfg.fmax);
        let mut pts = Vec::new();
        for i in 0..cfg.n_filters + 2 {
            pts.push(inv(lo + (hi - lo) * i as f64 / (cfg.n_filters + 1) as f64));
        }
        let mut rows = Vec::new();
        for m in 0..cfg.n_filters {
            let mut row = Vec::new();
            for k in 0..cfg.n_fft / 2 + 1 {
                let f = k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64;
                let w = if f <= pts[m] || f >= pts[m + 2] {
                    0.0
                } else if f <= pts[m + 1] {
                    (f - pts[m]) / (pts[m + 1] - pts[m])
                } else {
                    (pts[m + 2] - f) / (pts[m + 2] - pts[m + 1])
                };
                row.push(w);
            }
            rows.push(row);
        }
        rows
    }

    #[test]
    fn stats_standardize_the_fitted_set() {
        let a = FeatureMatrix::new(ndarray::array![[1.0, 5.0], [3.0, 5.0]]);
        let b = FeatureMatrix::new(ndarray::array![[5.0, 5.0]]);
        let stats = FeatureStats::fit(&[&a, &b]).unwrap();
        assert_eq!(stats.mean, vec![3.0, 5.0]);
        assert!((stats.std[0] - (8.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(stats.std[1], 1.0);
        let mut c = a.clone();
        stats.apply(&mut c).unwrap();
        assert!((c.frames[[0, 0]] + 2.0 / stats.std[0]).abs() < 1e-12);
        assert_eq!(c.frames[[1, 1]], 0.0);
        assert!(FeatureStats::fit(&[]).is_err());
    }

    #[test]
    fn default_bank_matches_scalar_reference() {
        let cfg = FbankConfig::default();
        let bank = mel_filterbank(&cfg).unwrap();
        assert_eq!(bank.dim(), (40, 257));
        let reference = reference_bank(&cfg);
        for (m, row) in reference.iter().enumerate() {
            assert!(bank.row(m).sum() > 0.0, "row {m} is empty");
            for (k, &w) in row.iter().enumerate() {
                assert!((bank[[m, k]] - w).abs() < 1e-12, "({m},{k})");
            }
        }
        for col in bank.columns() {
            assert!(col.sum() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn single_filter_peaks_mid_spectrum() {
        let cfg = FbankConfig {
            n_filters: 1,
            ..FbankConfig::default()
        };
        let bank = mel_filterbank(&cfg).unwrap();
        assert!(bank.iter().all(|&w| w >= 0.0));
        let peak = bank
            .row(0)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // centre of the mel range, mel_to_hz(hz_to_mel(8000) / 2) ~ 2.1 kHz
        let centre_bin = mel_to_hz(hz_to_mel(8000.0) / 2.0) * 512.0 / 16000.0;
        assert!((peak as f64 - centre_bin).abs() <= 1.0);
        assert!(peak > 0 && peak < 256);
    }

    #[test]
    fn centres_increase_with_row() {
        let bank = mel_filterbank(&FbankConfig::default()).unwrap();
        let peaks: Vec<usize> = bank
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0
            })
            .collect();
        assert!(peaks.windows(2).all(|w| w[0] <= w[1]));
        assert!(peaks.first() < peaks.last());
    }

    #[test]
    fn rejects_more_filters_than_bins() {
        let cfg = FbankConfig {
            fmin: 0.0,
            fmax: 100.0,
            n_filters: 10,
            ..FbankConfig::default()
        };
        assert!(matches!(mel_filterbank(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = FbankConfig::default();
        for bad in [
            FbankConfig { window_len: 600, ..base.clone() },
            FbankConfig { fmax: 9000.0, ..base.clone() },
            FbankConfig { fmin: 8000.0, ..base.clone() },
            FbankConfig { n_filters: 0, ..base.clone() },
            FbankConfig { log_floor: 0.0, ..base.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn one_second_gives_98_frames() {
        let audio = vec![0.1; 16000];
        let feats = compute_fbank(&audio, &FbankConfig::default()).unwrap();
        assert_eq!(feats.n_frames(), 98);
        assert_eq!(feats.width(), 40);
    }

    #[test]
    fn silence_hits_the_floor() {
        let cfg = FbankConfig::default();
        let feats = compute_fbank(&[0.0; 4000], &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(feats.frames.iter().all(|&v| v == floor));
    }

    #[test]
    fn errors_on_short_or_non_finite_audio() {
        let cfg = FbankConfig::default();
        assert!(matches!(
            compute_fbank(&[0.0; 399], &cfg),
            Err(Error::AudioTooShort { len: 399, min: 400 })
        ));
        let mut audio = vec![0.0; 1000];
        audio[500] = f64::NAN;
        assert!(matches!(compute_fbank(&audio, &cfg), Err(Error::NonFinite(_))));
    }

    /// Direct O(N^2) DFT fbank, the oracle for the FFT path.
    fn dft_fbank(audio: &[f64], cfg: &FbankConfig) -> Vec<Vec<f64>> {
        let bank = reference_bank(cfg);
        let n_frames = 1 + (audio.len() - cfg.window_len) / cfg.hop_len;
        let n = cfg.n_fft;
        let mut out = Vec::new();
        for t in 0..n_frames {
            let mut power = vec![0.0; n / 2 + 1];
            for (k, p) in power.iter_mut().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for j in 0..cfg.window_len {
                    let w = 0.54
                        - 0.46 * (2.0 * PI * j as f64 / (cfg.window_len - 1) as f64).cos();
                    let x = audio[t * cfg.hop_len + j] * w;
                    let ang = -2.0 * PI * (k * j) as f64 / n as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                *p = re * re + im * im;
            }
            out.push(
                bank.iter()
                    .map(|row| {
                        let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
                        e.max(cfg.log_floor).ln()
                    })
                    .collect(),
            );
        }
        out
    }

    #[test]
    fn sine_matches_direct_dft_and_concentrates_near_1khz() {
        let cfg = FbankConfig::default();
        let audio: Vec<f64> = (0..2000)
            .map(|n| 0.5 * (2.0 * PI * 1000.0 * n as f64 / 16000.0).sin())
            .collect();
        let feats = compute_fbank(&audio, &cfg).unwrap();
        let oracle = dft_fbank(&audio, &cfg);
        assert_eq!(feats.n_frames(), oracle.len());
        for (t, row) in oracle.iter().enumerate() {
            for (m, &want) in row.iter().enumerate() {
                let got = feats.frames[[t, m]];
                assert!(
                    (got - want).abs() <= 1e-6 * want.abs().max(1e-12),
                    "frame {t} filter {m}: {got} vs {want}"
                );
            }
        }
        let bank = mel_filterbank(&cfg).unwrap();
        let bin_1k = 32; // 1000 Hz * 512 / 16000
        for t in 0..feats.n_frames() {
            let best = feats
                .frame(t)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert!(bank[[best, bin_1k]] > 0.0, "frame {t}: peak filter {best}");
        }
    }

    #[test]
    fn seconds_to_frame_edges() {
        let cfg = FbankConfig::default();
        assert_eq!(cfg.seconds_to_frame(1.0, 98), 98);
        assert_eq!(cfg.seconds_to_frame(0.0, 98), 1);
        assert_eq!(cfg.seconds_to_frame(0.025, 98), 1);
        assert_eq!(cfg.seconds_to_frame(0.0251, 98), 2);
        assert_eq!(cfg.seconds_to_frame(0.035, 98), 2);
        for frame in 1..=98 {
            let covered = cfg.frame_coverage_end(frame);
            assert_eq!(cfg.seconds_to_frame(covered, 98), frame);
        }
    }

    #[test]
    fn normalization_centres_channels() {
        let audio: Vec<f64> = (0..16000)
            .map(|n| 0.3 * (n as f64 * 0.07).sin() * (n as f64 / 16000.0))
            .collect();
        let cfg = FbankConfig {
            normalize: true,
            ..FbankConfig::default()
        };
        let feats = compute_fbank(&audio, &cfg).unwrap();
        for col in feats.frames.columns() {
            assert!(col.mean().unwrap().abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn frame_count_formula(len in 400usize..6000) {
            let cfg = FbankConfig::default();
            let audio: Vec<f64> = (0..len).map(|n| ((n * 7919) % 200) as f64 / 400.0 - 0.25).collect();
            let feats = compute_fbank(&audio, &cfg).unwrap();
            prop_assert_eq!(feats.n_frames(), 1 + (len - 400) / 160);
            prop_assert!(feats.frames.iter().all(|v| v.is_finite() && *v >= cfg.log_floor.ln()));
        }

        #[test]
        fn hop_shift_shifts_frames(seed in 0u64..1000, len in 800usize..4000) {
            let cfg = FbankConfig::default();
            let audio: Vec<f64> = (0..len + cfg.hop_len)
                .map(|n| (((n as u64).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f64 / 1000.0) - 0.5)
                .collect();
            let full = compute_fbank(&audio, &cfg).unwrap();
            let shifted = compute_fbank(&audio[cfg.hop_len..], &cfg).unwrap();
            prop_assert_eq!(full.n_frames(), shifted.n_frames() + 1);
            for t in 0..shifted.n_frames() {
                for m in 0..cfg.n_filters {
                    prop_assert!((full.frames[[t + 1, m]] - shifted.frames[[t, m]]).abs() < 1e-9);
                }
            }
        }
    }
}
