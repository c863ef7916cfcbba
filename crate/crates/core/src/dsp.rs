//! Log-mel front-end: periodic Hann window, STFT power, HTK mel filterbank.
//!
//! Two presets are used across the crate. The streaming front-end runs 32 bins
//! over 25 ms windows with a 10 ms hop; the Approach-A speaker embedding runs
//! 96 bins over 2048-sample windows with a 512-sample hop.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Floor added before the log so silent frames stay finite.
pub const LOG_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DspError {
    #[error("clip of {len} samples is shorter than one {win_len}-sample window")]
    TooShort { len: usize, win_len: usize },
    #[error("invalid mel configuration: {0}")]
    InvalidRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub win_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl MelConfig {
    /// Streaming front-end: 400-sample (25 ms) window, 32 bins, 60-3800 Hz.
    pub const fn pipeline() -> Self {
        Self {
            sample_rate: 16_000,
            win_len: 400,
            hop: 160,
            fft_size: 512,
            n_mels: 32,
            f_min: 60.0,
            f_max: 3800.0,
        }
    }

    /// Approach-A speaker features: 96 bins, hop 512.
    pub const fn approach_a() -> Self {
        Self {
            sample_rate: 16_000,
            win_len: 2048,
            hop: 512,
            fft_size: 2048,
            n_mels: 96,
            f_min: 0.0,
            f_max: 8000.0,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames produced from `n` samples; zero when `n < win_len`.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.win_len {
            0
        } else {
            (n - self.win_len) / self.hop + 1
        }
    }

    /// Shortest input that yields `frames` frames.
    pub fn samples_for_frames(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            self.win_len + (frames - 1) * self.hop
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |m: &str| Err(DspError::InvalidRange(m.to_string()));
        if self.win_len == 0 || self.hop == 0 {
            return bad("window and hop must be positive");
        }
        if self.win_len > self.fft_size {
            return bad("win_len exceeds fft_size");
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1");
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= nyquist) {
            return bad("require 0 <= f_min < f_max <= sample_rate/2");
        }
        Ok(())
    }
}

/// One frame of scaled log-mel values.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFrame(pub Vec<f64>);

impl MelFrame {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Periodic Hann window, `w[n] = 0.5 - 0.5 cos(2 pi n / len)`.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Triangular HTK-scale filters, `n_mels` rows by `fft_size/2 + 1` columns.
pub fn mel_filterbank(config: &MelConfig) -> Result<Vec<Vec<f64>>, DspError> {
    config.validate()?;
    let mel_lo = hz_to_mel(config.f_min);
    let mel_hi = hz_to_mel(config.f_max);
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let bin_hz = config.sample_rate as f64 / config.fft_size as f64;

    Ok((0..config.n_mels)
        .map(|m| {
            let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..config.n_bins())
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let rising = (f - lo) / (center - lo);
                    let falling = (hi - f) / (hi - center);
                    rising.min(falling).max(0.0)
                })
                .collect()
        })
        .collect())
}

/// `x / 10 + 2`, applied elementwise.
pub fn scale_mels(log_mels: &mut [Vec<f64>]) {
    for row in log_mels {
        for v in row.iter_mut() {
            *v = *v / 10.0 + 2.0;
        }
    }
}

/// Reusable extractor: window, filterbank and FFT plan built once.
#[derive(Clone)]
pub struct MelExtractor {
    config: MelConfig,
    window: Vec<f64>,
    filterbank: Vec<Vec<f64>>,
    // first and last non-zero column per filter
    supports: Vec<(usize, usize)>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Result<Self, DspError> {
        let filterbank = mel_filterbank(&config)?;
        let supports = filterbank
            .iter()
            .map(|row| {
                let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = row.iter().rposition(|&w| w > 0.0).map_or(0, |l| l + 1);
                (first, last.max(first))
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(config.fft_size);
        Ok(Self {
            config,
            window: hann_window(config.win_len),
            filterbank,
            supports,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filterbank
    }

    fn check_len(&self, n: usize) -> Result<(), DspError> {
        if n < self.config.win_len {
            return Err(DspError::TooShort {
                len: n,
                win_len: self.config.win_len,
            });
        }
        Ok(())
    }

    /// Squared-magnitude spectrum of every frame.
    pub fn stft_power(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, DspError> {
        self.check_len(samples.len())?;
        let cfg = &self.config;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        Ok((0..cfg.frame_count(samples.len()))
            .map(|f| {
                let frame = &samples[f * cfg.hop..f * cfg.hop + cfg.win_len];
                for (slot, (s, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                    *slot = Complex::new(s * w, 0.0);
                }
                for slot in &mut buf[cfg.win_len..] {
                    *slot = Complex::new(0.0, 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..cfg.n_bins()].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect())
    }

    /// Mel-filtered power, no log.
    pub fn mel_power(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, DspError> {
        let power = self.stft_power(samples)?;
        Ok(power.iter().map(|frame| self.apply_filterbank(frame)).collect())
    }

    fn apply_filterbank(&self, power: &[f64]) -> Vec<f64> {
        self.filterbank
            .iter()
            .zip(&self.supports)
            .map(|(row, &(lo, hi))| {
                row[lo..hi]
                    .iter()
                    .zip(&power[lo..hi])
                    .map(|(w, p)| w * p)
                    .sum()
            })
            .collect()
    }

    /// Scaled log-mel frames: `ln(mel_power + 1e-6) / 10 + 2`.
    pub fn melspectrogram(&self, samples: &[f64]) -> Result<Vec<MelFrame>, DspError> {
        let mut mels = self.mel_power(samples)?;
        for row in mels.iter_mut() {
            for v in row.iter_mut() {
                *v = (*v + LOG_EPS).ln();
            }
        }
        scale_mels(&mut mels);
        Ok(mels.into_iter().map(MelFrame).collect())
    }
}

pub fn stft_power(samples: &[f64], config: &MelConfig) -> Result<Vec<Vec<f64>>, DspError> {
    MelExtractor::new(*config)?.stft_power(samples)
}

pub fn melspectrogram(samples: &[f64], config: &MelConfig) -> Result<Vec<MelFrame>, DspError> {
    MelExtractor::new(*config)?.melspectrogram(samples)
}
