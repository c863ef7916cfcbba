//! WAV I/O, amplitude normalization and energy-based trimming.
//!
//! The only on-disk format is RIFF/WAVE, PCM 16-bit little-endian, mono,
//! 16 kHz. Anything else is rejected rather than converted.

use std::fs;
use std::io;
use std::path::Path;

pub const SAMPLE_RATE: u32 = 16_000;

const PCM_SCALE: f64 = 32768.0;
const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, thiserror::Error)]
pub enum AudioError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated file")]
    TruncatedFile,
    #[error("input is silent (rms {0:e})")]
    SilentInput(f64),
}

/// Mono audio with samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PcmClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl PcmClip {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

pub fn rms(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Clamps to [-1, 1] and returns how many samples were clipped.
pub(crate) fn hard_clip(samples: &mut [f64]) -> usize {
    let mut clipped = 0;
    for s in samples.iter_mut() {
        if *s > 1.0 {
            *s = 1.0;
            clipped += 1;
        } else if *s < -1.0 {
            *s = -1.0;
            clipped += 1;
        }
    }
    clipped
}

pub fn sample_from_i16(v: i16) -> f64 {
    v as f64 / PCM_SCALE
}

pub fn sample_to_i16(s: f64) -> i16 {
    (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16
}

/// Decodes headerless 16-bit little-endian PCM. A trailing odd byte is ignored.
pub fn decode_pcm16le(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(2)
        .map(|b| sample_from_i16(i16::from_le_bytes([b[0], b[1]])))
        .collect()
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<PcmClip, AudioError> {
    let bytes = fs::read(path)?;
    parse_wav(&bytes)
}

pub fn parse_wav(bytes: &[u8]) -> Result<PcmClip, AudioError> {
    if bytes.len() < 12 {
        if bytes.len() >= 4 && &bytes[..4] != b"RIFF" {
            return Err(AudioError::NotWav);
        }
        return Err(if bytes.len() < 4 {
            AudioError::NotWav
        } else {
            AudioError::TruncatedFile
        });
    }
    if &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(AudioError::NotWav);
    }

    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start.checked_add(size).ok_or(AudioError::TruncatedFile)?;
        match id {
            b"fmt " => {
                let body = bytes
                    .get(body_start..body_end)
                    .ok_or(AudioError::TruncatedFile)?;
                if body.len() < 16 {
                    return Err(AudioError::TruncatedFile);
                }
                let le16 = |i: usize| u16::from_le_bytes([body[i], body[i + 1]]);
                let mut tag = le16(0);
                if tag == WAVE_FORMAT_EXTENSIBLE && body.len() >= 26 {
                    tag = le16(24);
                }
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                format = Some((tag, le16(2), rate, le16(14)));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format.ok_or_else(|| {
                    AudioError::UnsupportedFormat("data chunk before fmt chunk".into())
                })?;
                check_format(tag, channels, rate, bits)?;
                let body = bytes
                    .get(body_start..body_end)
                    .ok_or(AudioError::TruncatedFile)?;
                if body.len() % 2 != 0 {
                    return Err(AudioError::TruncatedFile);
                }
                return Ok(PcmClip::new(decode_pcm16le(body)));
            }
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }
    Err(match format {
        None => AudioError::UnsupportedFormat("missing fmt chunk".into()),
        Some(_) => AudioError::TruncatedFile,
    })
}

fn check_format(tag: u16, channels: u16, rate: u32, bits: u16) -> Result<(), AudioError> {
    if tag != WAVE_FORMAT_PCM {
        return Err(AudioError::UnsupportedFormat(format!(
            "format tag {tag:#06x}, expected PCM"
        )));
    }
    if bits != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{bits}-bit samples, expected 16"
        )));
    }
    if channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{channels} channels, expected mono"
        )));
    }
    if rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedFormat(format!(
            "{rate} Hz, expected {SAMPLE_RATE}"
        )));
    }
    Ok(())
}

pub fn encode_wav(clip: &PcmClip) -> Vec<u8> {
    let data_len = clip.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &clip.samples {
        out.extend_from_slice(&sample_to_i16(s).to_le_bytes());
    }
    out
}

pub fn write_wav(clip: &PcmClip, path: impl AsRef<Path>) -> Result<(), AudioError> {
    fs::write(path, encode_wav(clip))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub clip: PcmClip,
    pub gain: f64,
    pub clipped: usize,
}

/// Scales the clip so its RMS sits at `target_dbfs`; overshoot is hard-clipped.
pub fn rms_normalize(clip: &PcmClip, target_dbfs: f64) -> Result<Normalized, AudioError> {
    let current = clip.rms();
    if current <= 1e-8 {
        return Err(AudioError::SilentInput(current));
    }
    let gain = 10f64.powf(target_dbfs / 20.0) / current;
    let mut samples: Vec<f64> = clip.samples.iter().map(|s| s * gain).collect();
    let clipped = hard_clip(&mut samples);
    Ok(Normalized {
        clip: PcmClip {
            samples,
            sample_rate: clip.sample_rate,
        },
        gain,
        clipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VadParams {
    pub frame_len: usize,
    pub hop: usize,
    /// Margin above the estimated noise floor, in dB.
    pub energy_floor_db: f64,
    /// Frames at or above this absolute level count as speech whatever the
    /// floor, so stationary recordings are not trimmed away.
    pub speech_dbfs: f64,
    pub min_speech_frames: usize,
    pub hangover_frames: usize,
}

impl Default for VadParams {
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop: 160,
            energy_floor_db: 10.0,
            speech_dbfs: -35.0,
            min_speech_frames: 3,
            hangover_frames: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VadResult {
    pub clip: PcmClip,
    pub speech_detected: bool,
    /// Sample range of the input that was kept.
    pub start: usize,
    pub end: usize,
}

/// Frame energies in dB (mean square, floored at -120 dB).
pub fn frame_energies_db(samples: &[f64], frame_len: usize, hop: usize) -> Vec<f64> {
    let energy = |frame: &[f64]| {
        let ms = frame.iter().map(|s| s * s).sum::<f64>() / frame.len() as f64;
        10.0 * (ms + 1e-12).log10()
    };
    if samples.is_empty() {
        return Vec::new();
    }
    if samples.len() < frame_len {
        return vec![energy(samples)];
    }
    (0..=(samples.len() - frame_len) / hop)
        .map(|f| energy(&samples[f * hop..f * hop + frame_len]))
        .collect()
}

/// Trims leading and trailing silence.
///
/// Noise floor is the 10th percentile of frame energies. A frame is speech
/// when its energy clears the floor by `energy_floor_db` or reaches
/// `speech_dbfs`; runs shorter than `min_speech_frames` are dropped and the
/// last kept frame is extended by `hangover_frames`.
pub fn vad_trim(clip: &PcmClip, params: &VadParams) -> VadResult {
    assert!(params.frame_len > 0 && params.hop > 0 && params.min_speech_frames >= 1);
    let empty = |clip: &PcmClip| VadResult {
        clip: PcmClip {
            samples: Vec::new(),
            sample_rate: clip.sample_rate,
        },
        speech_detected: false,
        start: 0,
        end: 0,
    };

    let energies = frame_energies_db(&clip.samples, params.frame_len, params.hop);
    if energies.is_empty() {
        return empty(clip);
    }
    let mut sorted = energies.clone();
    sorted.sort_by(f64::total_cmp);
    let floor = sorted[(sorted.len() - 1) / 10];
    let threshold = (floor + params.energy_floor_db).min(params.speech_dbfs);

    let is_speech: Vec<bool> = energies.iter().map(|&e| e >= threshold && e > -119.0).collect();
    let mut first = None;
    let mut last = None;
    let mut run_start = 0;
    for i in 0..=is_speech.len() {
        let speech = is_speech.get(i).copied().unwrap_or(false);
        if speech && (i == 0 || !is_speech[i - 1]) {
            run_start = i;
        }
        if !speech && i > 0 && is_speech[i - 1] && i - run_start >= params.min_speech_frames {
            first.get_or_insert(run_start);
            last = Some(i - 1);
        }
    }
    let (Some(first), Some(last)) = (first, last) else {
        return empty(clip);
    };

    let n = clip.samples.len();
    let start = first * params.hop;
    let end = if last + params.hangover_frames >= energies.len() - 1 {
        n
    } else {
        ((last + params.hangover_frames) * params.hop + params.frame_len).min(n)
    };
    VadResult {
        clip: PcmClip {
            samples: clip.samples[start..end].to_vec(),
            sample_rate: clip.sample_rate,
        },
        speech_detected: true,
        start,
        end,
    }
}
