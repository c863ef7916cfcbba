//! Seeded offline augmentation: gain, SNR-calibrated noise, room impulse
//! response convolution, FFT band-stop and tanh distortion, plus the
//! probabilistic chain that applies them per clip.

use std::path::{Path, PathBuf};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{hard_clip, read_wav, rms, AudioError, PcmClip};
use crate::rng::SplitMix64;

const NYQUIST: f64 = 8000.0;
const SILENCE_RMS: f64 = 1e-10;

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("signal is silent")]
    SilentSignal,
    #[error("noise is silent")]
    SilentNoise,
    #[error("impulse response is empty")]
    EmptyRir,
    #[error("invalid stop band [{f_lo}, {f_hi}] Hz")]
    InvalidBand { f_lo: f64, f_hi: f64 },
    #[error("distortion drive must be positive, got {0}")]
    NonPositiveDrive(f64),
    #[error("invalid augmentation plan: {0}")]
    InvalidPlan(String),
    #[error("{path}: {source}")]
    Bank {
        path: PathBuf,
        #[source]
        source: AudioError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Output of an op that may saturate.
#[derive(Debug, Clone, PartialEq)]
pub struct Clipped {
    pub clip: PcmClip,
    pub clipped: usize,
}

pub fn apply_gain(clip: &PcmClip, db: f64) -> Clipped {
    let g = 10f64.powf(db / 20.0);
    let mut samples: Vec<f64> = clip.samples.iter().map(|s| s * g).collect();
    let clipped = hard_clip(&mut samples);
    Clipped {
        clip: PcmClip::new(samples),
        clipped,
    }
}

/// The noise segment actually mixed in, before scaling. Tiled when short.
pub fn tile_noise(noise: &[f64], len: usize) -> Vec<f64> {
    noise.iter().copied().cycle().take(len).collect()
}

/// Scale factor that puts `noise` at `snr_db` below `signal`.
pub fn snr_scale(signal: &[f64], noise: &[f64], snr_db: f64) -> Result<f64, AugmentError> {
    let rs = rms(signal);
    if rs < SILENCE_RMS {
        return Err(AugmentError::SilentSignal);
    }
    let rn = rms(noise);
    if rn < SILENCE_RMS {
        return Err(AugmentError::SilentNoise);
    }
    Ok(rs / (rn * 10f64.powf(snr_db / 20.0)))
}

pub fn add_noise_snr(clip: &PcmClip, noise: &PcmClip, snr_db: f64) -> Result<Clipped, AugmentError> {
    if noise.is_empty() {
        return Err(AugmentError::SilentNoise);
    }
    let segment = tile_noise(&noise.samples, clip.len());
    let scale = snr_scale(&clip.samples, &segment, snr_db)?;
    let mut samples: Vec<f64> = clip
        .samples
        .iter()
        .zip(&segment)
        .map(|(s, n)| s + scale * n)
        .collect();
    let clipped = hard_clip(&mut samples);
    Ok(Clipped {
        clip: PcmClip::new(samples),
        clipped,
    })
}

/// Kernels longer than this are convolved through the FFT.
const DIRECT_CONVOLUTION_MAX: usize = 64;

fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (k, &hv) in h.iter().enumerate().take(x.len()) {
        if hv == 0.0 {
            continue;
        }
        for (o, xv) in out[k..].iter_mut().zip(x) {
            *o += hv * xv;
        }
    }
    out
}

fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let h = &h[..h.len().min(x.len())];
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let pad = |v: &[f64]| {
        let mut buf: Vec<Complex<f64>> = v.iter().map(|&s| Complex::new(s, 0.0)).collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        forward.process(&mut buf);
        buf
    };
    let mut spectrum = pad(x);
    for (a, b) in spectrum.iter_mut().zip(pad(h)) {
        *a *= b;
    }
    planner.plan_fft_inverse(n).process(&mut spectrum);
    spectrum[..x.len()].iter().map(|c| c.re / n as f64).collect()
}

/// Linear convolution truncated to the input length, rescaled to the input peak.
pub fn convolve_rir(clip: &PcmClip, rir: &PcmClip) -> Result<PcmClip, AugmentError> {
    if rir.is_empty() {
        return Err(AugmentError::EmptyRir);
    }
    if clip.is_empty() {
        return Ok(clip.clone());
    }
    let mut out = if rir.len() <= DIRECT_CONVOLUTION_MAX {
        convolve_direct(&clip.samples, &rir.samples)
    } else {
        convolve_fft(&clip.samples, &rir.samples)
    };
    let in_peak = clip.peak();
    let out_peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if in_peak > 0.0 && out_peak > 0.0 {
        let g = in_peak / out_peak;
        out.iter_mut().for_each(|s| *s *= g);
    }
    hard_clip(&mut out);
    Ok(PcmClip::new(out))
}

/// Zeroes every FFT bin whose frequency lies in `[f_lo, f_hi]`.
pub fn band_stop(clip: &PcmClip, f_lo: f64, f_hi: f64) -> Result<PcmClip, AugmentError> {
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi < NYQUIST) {
        return Err(AugmentError::InvalidBand { f_lo, f_hi });
    }
    let n = clip.len();
    if n == 0 {
        return Ok(clip.clone());
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = clip.samples.iter().map(|&s| Complex::new(s, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let bin_hz = clip.sample_rate as f64 / n as f64;
    for k in 0..=n / 2 {
        let f = k as f64 * bin_hz;
        if f >= f_lo && f <= f_hi {
            buf[k] = Complex::new(0.0, 0.0);
            if k != 0 {
                buf[n - k] = Complex::new(0.0, 0.0);
            }
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
    hard_clip(&mut out);
    Ok(PcmClip::new(out))
}

/// `tanh(k x) / tanh(k)`, unit gain at full scale.
pub fn tanh_distortion(clip: &PcmClip, drive: f64) -> Result<PcmClip, AugmentError> {
    if !(drive > 0.0) || !drive.is_finite() {
        return Err(AugmentError::NonPositiveDrive(drive));
    }
    let norm = drive.tanh();
    let mut out: Vec<f64> = clip.samples.iter().map(|x| (drive * x).tanh() / norm).collect();
    hard_clip(&mut out);
    Ok(PcmClip::new(out))
}

/// Probabilities and parameter ranges; banks are attached separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentSettings {
    pub seed: u64,
    pub p_noise: f64,
    /// Drawn to keep the random stream stable; pitch shifting is not applied.
    pub p_pitch: f64,
    pub p_rir: f64,
    pub p_band_stop: f64,
    pub p_distortion: f64,
    pub snr_range: [f64; 2],
    pub gain_range: [f64; 2],
    pub band_center_range: [f64; 2],
    pub band_width: f64,
    pub drive_range: [f64; 2],
}

impl Default for AugmentSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            p_noise: 0.75,
            p_pitch: 0.25,
            p_rir: 0.5,
            p_band_stop: 0.0,
            p_distortion: 0.0,
            snr_range: [5.0, 30.0],
            gain_range: [-6.0, 6.0],
            band_center_range: [500.0, 6000.0],
            band_width: 400.0,
            drive_range: [0.5, 5.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub settings: AugmentSettings,
    pub noise_bank: Vec<PcmClip>,
    pub rir_bank: Vec<PcmClip>,
}

impl AugmentPlan {
    pub fn new(settings: AugmentSettings, noise_bank: Vec<PcmClip>, rir_bank: Vec<PcmClip>) -> Result<Self, AugmentError> {
        let plan = Self {
            settings,
            noise_bank,
            rir_bank,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let s = &self.settings;
        let bad = |m: String| Err(AugmentError::InvalidPlan(m));
        for (name, p) in [
            ("p_noise", s.p_noise),
            ("p_pitch", s.p_pitch),
            ("p_rir", s.p_rir),
            ("p_band_stop", s.p_band_stop),
            ("p_distortion", s.p_distortion),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, [lo, hi]) in [
            ("snr_range", s.snr_range),
            ("gain_range", s.gain_range),
            ("band_center_range", s.band_center_range),
            ("drive_range", s.drive_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} must be a finite interval with lo <= hi"));
            }
        }
        if s.p_noise > 0.0 && self.noise_bank.is_empty() {
            return bad("p_noise > 0 needs a non-empty noise bank".into());
        }
        if s.p_rir > 0.0 && self.rir_bank.is_empty() {
            return bad("p_rir > 0 needs a non-empty RIR bank".into());
        }
        if s.p_band_stop > 0.0 {
            let lo = s.band_center_range[0] - s.band_width / 2.0;
            let hi = s.band_center_range[1] + s.band_width / 2.0;
            if !(s.band_width > 0.0 && lo > 0.0 && hi < NYQUIST) {
                return bad("band-stop ranges must stay inside (0, 8000) Hz".into());
            }
        }
        if s.p_distortion > 0.0 && s.drive_range[0] <= 0.0 {
            return bad("drive_range must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AppliedOp {
    Noise { bank_index: usize, snr_db: f64, clipped: usize },
    Rir { bank_index: usize },
    BandStop { f_lo: f64, f_hi: f64 },
    Distortion { drive: f64 },
    Gain { db: f64, clipped: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub index: u64,
    /// Whether the pitch draw came up; the op itself is not applied.
    pub pitch_drawn: bool,
    pub ops: Vec<AppliedOp>,
}

impl AugmentRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Every draw is consumed whether or not its op applies, so the stream of
/// parameters for one op does not depend on the probabilities of the others.
struct Draws {
    noise: bool,
    noise_pick: u64,
    snr_db: f64,
    pitch: bool,
    rir: bool,
    rir_pick: u64,
    band: bool,
    band_center: f64,
    distortion: bool,
    drive: f64,
    gain_db: f64,
}

impl Draws {
    fn new(settings: &AugmentSettings, index: u64) -> Self {
        let mut rng = SplitMix64::for_item(settings.seed, index);
        let [snr_lo, snr_hi] = settings.snr_range;
        let [c_lo, c_hi] = settings.band_center_range;
        let [d_lo, d_hi] = settings.drive_range;
        let [g_lo, g_hi] = settings.gain_range;
        Self {
            noise: rng.next_f64() < settings.p_noise,
            noise_pick: rng.next_u64(),
            snr_db: rng.uniform(snr_lo, snr_hi),
            pitch: rng.next_f64() < settings.p_pitch,
            rir: rng.next_f64() < settings.p_rir,
            rir_pick: rng.next_u64(),
            band: rng.next_f64() < settings.p_band_stop,
            band_center: rng.uniform(c_lo, c_hi),
            distortion: rng.next_f64() < settings.p_distortion,
            drive: rng.uniform(d_lo, d_hi),
            gain_db: rng.uniform(g_lo, g_hi),
        }
    }
}

/// Applies noise, reverberation, band-stop, distortion and gain in that order.
pub fn augment_clip(clip: &PcmClip, plan: &AugmentPlan, index: u64) -> Result<(PcmClip, AugmentRecord), AugmentError> {
    let s = &plan.settings;
    let d = Draws::new(s, index);
    let mut ops = Vec::new();
    let mut out = clip.clone();

    if d.noise {
        let bank_index = (d.noise_pick % plan.noise_bank.len() as u64) as usize;
        let r = add_noise_snr(&out, &plan.noise_bank[bank_index], d.snr_db)?;
        ops.push(AppliedOp::Noise {
            bank_index,
            snr_db: d.snr_db,
            clipped: r.clipped,
        });
        out = r.clip;
    }
    if d.rir {
        let bank_index = (d.rir_pick % plan.rir_bank.len() as u64) as usize;
        out = convolve_rir(&out, &plan.rir_bank[bank_index])?;
        ops.push(AppliedOp::Rir { bank_index });
    }
    if d.band {
        let f_lo = d.band_center - s.band_width / 2.0;
        let f_hi = d.band_center + s.band_width / 2.0;
        out = band_stop(&out, f_lo, f_hi)?;
        ops.push(AppliedOp::BandStop { f_lo, f_hi });
    }
    if d.distortion {
        out = tanh_distortion(&out, d.drive)?;
        ops.push(AppliedOp::Distortion { drive: d.drive });
    }
    let g = apply_gain(&out, d.gain_db);
    ops.push(AppliedOp::Gain {
        db: d.gain_db,
        clipped: g.clipped,
    });
    out = g.clip;

    Ok((
        out,
        AugmentRecord {
            index,
            pitch_drawn: d.pitch,
            ops,
        },
    ))
}

/// Loads every `.wav` in `dir`, sorted by file name.
pub fn load_bank(dir: impl AsRef<Path>) -> Result<Vec<PcmClip>, AugmentError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| read_wav(&path).map_err(|source| AugmentError::Bank { path, source }))
        .collect()
}
