//! Shared embedding backbone: stacks of mel frames in, 96-d embeddings out.
//!
//! The engine only depends on the [`Embedder`] trait. [`EmbedderSpec`] is a
//! seeded random projection followed by `tanh`, deterministic across
//! platforms, and can also be loaded from a WGEM weight file.

use std::path::Path;

use crate::binfmt::{FormatError, Reader, Writer};
use crate::dsp::MelFrame;
use crate::rng::SplitMix64;

pub const EMBEDDING_DIM: usize = 96;
pub const MEL_BINS: usize = 32;

const WGEM_MAGIC: &[u8; 4] = b"WGEM";

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

impl ModelError {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        ModelError::ShapeMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

/// `emb_features` consecutive mel frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct MelWindow {
    pub frames: Vec<MelFrame>,
}

impl MelWindow {
    pub fn new(frames: Vec<MelFrame>) -> Self {
        Self { frames }
    }

    pub fn constant(rows: usize, value: f64) -> Self {
        Self::new(vec![MelFrame(vec![value; MEL_BINS]); rows])
    }

    pub fn rows(&self) -> usize {
        self.frames.len()
    }

    pub fn flatten(&self) -> impl Iterator<Item = f64> + '_ {
        self.frames.iter().flat_map(|f| f.values().iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Embedding96(pub [f64; EMBEDDING_DIM]);

impl Embedding96 {
    pub fn zeros() -> Self {
        Self([0.0; EMBEDDING_DIM])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

pub trait Embedder: Send + Sync {
    /// Rows expected in every window.
    fn emb_features(&self) -> usize;

    fn embed(&self, window: &MelWindow) -> Result<Embedding96, ModelError>;

    fn embed_batch(&self, windows: &[MelWindow]) -> Result<Vec<Embedding96>, ModelError> {
        windows.iter().map(|w| self.embed(w)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedderKind {
    NativeStandin { seed: u64 },
    External,
}

/// Dense projection `tanh(W x / sqrt(D) + b)` with `W` of shape 96 x D.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderSpec {
    pub kind: EmbedderKind,
    pub emb_features: usize,
    /// Row-major, `EMBEDDING_DIM` rows of `emb_features * 32`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EmbedderSpec {
    /// Weights then bias drawn in order from SplitMix64(`seed`), uniform(-1, 1).
    pub fn native(seed: u64, emb_features: usize) -> Self {
        let mut rng = SplitMix64::new(seed);
        let input_dim = emb_features * MEL_BINS;
        let weights = (0..EMBEDDING_DIM * input_dim).map(|_| rng.next_signed()).collect();
        let bias = (0..EMBEDDING_DIM).map(|_| rng.next_signed()).collect();
        Self {
            kind: EmbedderKind::NativeStandin { seed },
            emb_features,
            weights,
            bias,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.emb_features * MEL_BINS
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(WGEM_MAGIC);
        w.u32(EMBEDDING_DIM as u32);
        w.u32(self.input_dim() as u32);
        w.f32s(&self.weights);
        w.f32s(&self.bias);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader::new(bytes, WGEM_MAGIC)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        if rows != EMBEDDING_DIM {
            return Err(ModelError::shape(format!("{EMBEDDING_DIM} rows"), rows));
        }
        if cols == 0 || !cols.is_multiple_of(MEL_BINS) {
            return Err(ModelError::shape(format!("a multiple of {MEL_BINS} columns"), cols));
        }
        let weights = r.f32s(rows * cols)?;
        let bias = r.f32s(rows)?;
        r.finish()?;
        Ok(Self {
            kind: EmbedderKind::External,
            emb_features: cols / MEL_BINS,
            weights,
            bias,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes()).map_err(FormatError::from)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(FormatError::from)?;
        Self::from_bytes(&bytes)
    }
}

impl Embedder for EmbedderSpec {
    fn emb_features(&self) -> usize {
        self.emb_features
    }

    fn embed(&self, window: &MelWindow) -> Result<Embedding96, ModelError> {
        if window.rows() != self.emb_features
            || window.frames.iter().any(|f| f.values().len() != MEL_BINS)
        {
            return Err(ModelError::shape(
                format!("{} x {MEL_BINS}", self.emb_features),
                format!(
                    "{} x {}",
                    window.rows(),
                    window.frames.first().map_or(0, |f| f.values().len())
                ),
            ));
        }
        let input: Vec<f64> = window.flatten().collect();
        let scale = 1.0 / (input.len() as f64).sqrt();
        let mut out = [0.0; EMBEDDING_DIM];
        for (i, (row, b)) in self.weights.chunks_exact(input.len()).zip(&self.bias).enumerate() {
            let dot: f64 = row.iter().zip(&input).map(|(w, x)| w * x).sum();
            out[i] = (dot * scale + b).tanh();
        }
        Ok(Embedding96(out))
    }
}
