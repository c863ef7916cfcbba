//! Speaker enrollment and verification by cosine similarity.
//!
//! Approach A averages the first 50 frames of a 96-bin mel power spectrogram
//! of the most recent audio and compares it with an enrolled reference; it
//! must clear both the authentication and the wake threshold. Approach B
//! encodes the last 4000 samples into a unit-norm 256-d speaker vector.

use std::path::Path;

use crate::binfmt::{FormatError, Reader, Writer};
use crate::dsp::{MelConfig, MelExtractor};
use crate::rng::SplitMix64;
use crate::stream_state::{ClientState, StreamError};

pub const DIM_A: usize = 96;
pub const DIM_B: usize = 256;
pub const STATS_DIM: usize = 128;

const WGSP_MAGIC: &[u8; 4] = b"WGSP";

#[derive(Debug, thiserror::Error)]
pub enum AuthError {
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    InsufficientAudio { needed: usize, got: usize },
    #[error("chunk must be exactly {expected} samples, got {got}")]
    WrongChunkSize { expected: usize, got: usize },
    #[error("audio yields a degenerate speaker embedding")]
    DegenerateAudio,
    #[error("no enrollment clips")]
    EmptyEnrollment,
    #[error("enrollment clip {index}: {source}")]
    Clip {
        index: usize,
        #[source]
        source: Box<AuthError>,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Approach {
    A,
    B,
}

impl std::fmt::Display for Approach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Approach::A => "A",
            Approach::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuthConfig {
    pub approach: Approach,
    pub auth_threshold: f64,
    pub wake_threshold: f64,
    pub a_num_frames: usize,
    pub a_required_samples: usize,
    pub b_chunk_samples: usize,
}

impl Default for AuthConfig {
    fn default() -> Self {
        Self {
            approach: Approach::B,
            auth_threshold: 0.75,
            wake_threshold: 0.5,
            a_num_frames: 50,
            a_required_samples: 27_136,
            b_chunk_samples: 4000,
        }
    }
}

impl AuthConfig {
    /// Samples that must precede a trigger for the configured approach.
    pub fn required_samples(&self) -> usize {
        match self.approach {
            Approach::A => self.a_required_samples,
            Approach::B => self.b_chunk_samples,
        }
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, AuthError> {
    if a.len() != b.len() {
        return Err(AuthError::DimMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(AuthError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn l2_normalize(v: &mut [f64]) -> Result<(), AuthError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12 && norm.is_finite()) {
        return Err(AuthError::DegenerateAudio);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(())
}

/// Mel-power time average used by Approach A.
#[derive(Debug, Clone)]
pub struct ApproachAFeatures {
    extractor: MelExtractor,
    num_frames: usize,
}

impl ApproachAFeatures {
    pub fn new(num_frames: usize) -> Self {
        Self {
            extractor: MelExtractor::new(MelConfig::approach_a()).expect("valid preset"),
            num_frames,
        }
    }

    pub fn required_samples(&self) -> usize {
        self.extractor.config().samples_for_frames(self.num_frames)
    }

    pub fn embed(&self, audio: &[f64]) -> Result<Vec<f64>, AuthError> {
        let needed = self.required_samples();
        if audio.len() < needed {
            return Err(AuthError::InsufficientAudio {
                needed,
                got: audio.len(),
            });
        }
        let mels = self
            .extractor
            .mel_power(audio)
            .map_err(|_| AuthError::InsufficientAudio {
                needed,
                got: audio.len(),
            })?;
        let mut mean = vec![0.0; DIM_A];
        for frame in &mels[..self.num_frames] {
            mean.iter_mut().zip(frame).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= self.num_frames as f64);
        Ok(mean)
    }
}

pub fn approach_a_embedding(audio: &[f64], num_frames: usize) -> Result<Vec<f64>, AuthError> {
    ApproachAFeatures::new(num_frames).embed(audio)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    NativeStandin { seed: u64 },
    External,
}

/// Stand-in speaker encoder: mel statistics projected to 256 dimensions.
#[derive(Clone)]
pub struct VoiceEncoderSpec {
    pub kind: EncoderKind,
    /// `DIM_B` rows of `STATS_DIM`, row-major.
    pub projection: Vec<f64>,
    pub chunk_samples: usize,
    extractor: MelExtractor,
}

impl std::fmt::Debug for VoiceEncoderSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VoiceEncoderSpec")
            .field("kind", &self.kind)
            .field("chunk_samples", &self.chunk_samples)
            .finish_non_exhaustive()
    }
}

impl PartialEq for VoiceEncoderSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.chunk_samples == other.chunk_samples
            && self.projection == other.projection
    }
}

/// Per-bin mean and std of the frames and of their first differences.
pub fn mel_statistics(frames: &[Vec<f64>]) -> Vec<f64> {
    fn mean_std(rows: &[Vec<f64>], bin: usize) -> (f64, f64) {
        if rows.is_empty() {
            return (0.0, 0.0);
        }
        let n = rows.len() as f64;
        let mean = rows.iter().map(|r| r[bin]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[bin] - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }
    let bins = frames.first().map_or(0, |f| f.len());
    let deltas: Vec<Vec<f64>> = frames
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect();
    let (mut means, mut stds, mut dmeans, mut dstds) = (vec![], vec![], vec![], vec![]);
    for bin in 0..bins {
        let (m, s) = mean_std(frames, bin);
        means.push(m);
        stds.push(s);
        let (m, s) = mean_std(&deltas, bin);
        dmeans.push(m);
        dstds.push(s);
    }
    [means, stds, dmeans, dstds].concat()
}

impl VoiceEncoderSpec {
    pub fn native(seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self {
            kind: EncoderKind::NativeStandin { seed },
            projection: (0..DIM_B * STATS_DIM).map(|_| rng.next_signed()).collect(),
            chunk_samples: 4000,
            extractor: MelExtractor::new(MelConfig::pipeline()).expect("valid preset"),
        }
    }

    pub fn encode(&self, audio: &[f64]) -> Result<Vec<f64>, AuthError> {
        if audio.len() != self.chunk_samples {
            return Err(AuthError::WrongChunkSize {
                expected: self.chunk_samples,
                got: audio.len(),
            });
        }
        let frames: Vec<Vec<f64>> = self
            .extractor
            .melspectrogram(audio)
            .map_err(|_| AuthError::DegenerateAudio)?
            .into_iter()
            .map(|f| f.0)
            .collect();
        let stats = mel_statistics(&frames);
        let mut y: Vec<f64> = self
            .projection
            .chunks_exact(STATS_DIM)
            .map(|row| row.iter().zip(&stats).map(|(p, s)| p * s).sum())
            .collect();
        l2_normalize(&mut y)?;
        Ok(y)
    }
}

/// Enrolled speaker reference for both approaches.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceProfile {
    pub ref_a: Vec<f64>,
    /// Unit L2 norm.
    pub ref_b: Vec<f64>,
    pub enrolled_clips: u32,
}

impl ReferenceProfile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(WGSP_MAGIC);
        w.u32(DIM_A as u32);
        w.u32(DIM_B as u32);
        w.f32s(&self.ref_a);
        w.f32s(&self.ref_b);
        w.u32(self.enrolled_clips);
        w.into_bytes()
    }

    /// `ref_b` is stored as f32, so its norm is only checked to 1e-6 here.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AuthError> {
        let mut r = Reader::new(bytes, WGSP_MAGIC)?;
        let dim_a = r.u32()? as usize;
        let dim_b = r.u32()? as usize;
        if dim_a != DIM_A || dim_b != DIM_B {
            return Err(FormatError::Invalid(format!(
                "profile dims {dim_a}/{dim_b}, expected {DIM_A}/{DIM_B}"
            ))
            .into());
        }
        let ref_a = r.f32s(DIM_A)?;
        let ref_b = r.f32s(DIM_B)?;
        let enrolled_clips = r.u32()?;
        r.finish()?;
        let norm = ref_b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(FormatError::Invalid(format!("ref_b norm {norm}, expected 1")).into());
        }
        if enrolled_clips == 0 {
            return Err(FormatError::Invalid("profile with zero enrolled clips".into()).into());
        }
        Ok(Self {
            ref_a,
            ref_b,
            enrolled_clips,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), AuthError> {
        std::fs::write(path, self.to_bytes()).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AuthError> {
        let bytes = std::fs::read(path).map_err(FormatError::from)?;
        Self::from_bytes(&bytes)
    }
}

/// Summed in a canonical order so the result does not depend on clip order.
fn canonical_mean(mut rows: Vec<Vec<f64>>, dim: usize) -> Vec<f64> {
    rows.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut mean = vec![0.0; dim];
    for row in &rows {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    if !rows.is_empty() {
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    }
    mean
}

/// Builds a reference from enrollment clips.
///
/// Each clip contributes its last `b_chunk_samples` to the Approach-B mean
/// and, when long enough, its last `a_required_samples` to the Approach-A
/// mean. With no clip long enough for A, `ref_a` is all zeros.
pub fn enroll(
    clips: &[Vec<f64>],
    encoder: &VoiceEncoderSpec,
    config: &AuthConfig,
) -> Result<ReferenceProfile, AuthError> {
    if clips.is_empty() {
        return Err(AuthError::EmptyEnrollment);
    }
    let features_a = ApproachAFeatures::new(config.a_num_frames);
    let need = config.required_samples().max(config.b_chunk_samples);
    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    for (index, clip) in clips.iter().enumerate() {
        let wrap = |e: AuthError| AuthError::Clip {
            index,
            source: Box::new(e),
        };
        if clip.len() < need {
            return Err(wrap(AuthError::InsufficientAudio {
                needed: need,
                got: clip.len(),
            }));
        }
        rows_b.push(encoder.encode(&clip[clip.len() - config.b_chunk_samples..]).map_err(wrap)?);
        if clip.len() >= config.a_required_samples {
            let tail = &clip[clip.len() - config.a_required_samples..];
            rows_a.push(features_a.embed(tail).map_err(wrap)?);
        }
    }
    let ref_a = canonical_mean(rows_a, DIM_A);
    let mut ref_b = canonical_mean(rows_b, DIM_B);
    l2_normalize(&mut ref_b)?;
    Ok(ReferenceProfile {
        ref_a,
        ref_b,
        enrolled_clips: clips.len() as u32,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuthResult {
    pub success: bool,
    pub similarity: Option<f64>,
    pub approach: Approach,
    pub reason: Option<String>,
}

/// Verifies the speaker with audio ending at the client's newest sample.
pub fn authenticate(
    profile: &ReferenceProfile,
    state: &ClientState,
    encoder: &VoiceEncoderSpec,
    features_a: &ApproachAFeatures,
    config: &AuthConfig,
) -> AuthResult {
    authenticate_at(profile, state, state.audio_total(), encoder, features_a, config)
}

/// Verifies the speaker with the audio that ends at absolute sample `audio_end`.
pub fn authenticate_at(
    profile: &ReferenceProfile,
    state: &ClientState,
    audio_end: u64,
    encoder: &VoiceEncoderSpec,
    features_a: &ApproachAFeatures,
    config: &AuthConfig,
) -> AuthResult {
    let failed = |reason: String| AuthResult {
        success: false,
        similarity: None,
        approach: config.approach,
        reason: Some(reason),
    };
    let audio = match state.audio_until(audio_end, config.required_samples()) {
        Ok(audio) => audio,
        Err(e @ StreamError::InsufficientAudio { .. }) => {
            log::info!("client {}: auth skipped: {e}", state.client_id);
            return failed(format!("insufficient audio: {e}"));
        }
        Err(e) => return failed(e.to_string()),
    };
    let scored = match config.approach {
        Approach::A => features_a
            .embed(&audio)
            .and_then(|emb| cosine_similarity(&emb, &profile.ref_a))
            .map(|sim| (sim, config.auth_threshold.max(config.wake_threshold))),
        Approach::B => encoder
            .encode(&audio)
            .and_then(|emb| cosine_similarity(&emb, &profile.ref_b))
            .map(|sim| (sim, config.auth_threshold)),
    };
    match scored {
        Ok((similarity, bar)) => {
            let success = similarity >= bar;
            AuthResult {
                success,
                similarity: Some(similarity),
                approach: config.approach,
                reason: (!success).then(|| format!("similarity below {bar}")),
            }
        }
        Err(e) => failed(e.to_string()),
    }
}

/// Similarity of the tail of `audio` to the reference, as authentication
/// would compute it at the end of the clip.
pub fn clip_similarity(
    profile: &ReferenceProfile,
    audio: &[f64],
    encoder: &VoiceEncoderSpec,
    features_a: &ApproachAFeatures,
    config: &AuthConfig,
) -> Result<f64, AuthError> {
    let need = config.required_samples();
    if audio.len() < need {
        return Err(AuthError::InsufficientAudio {
            needed: need,
            got: audio.len(),
        });
    }
    let tail = &audio[audio.len() - need..];
    match config.approach {
        Approach::A => cosine_similarity(&features_a.embed(tail)?, &profile.ref_a),
        Approach::B => cosine_similarity(&encoder.encode(tail)?, &profile.ref_b),
    }
}
