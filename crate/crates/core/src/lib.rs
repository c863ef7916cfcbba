//! Streaming wakeword detection with speaker authentication.
//!
//! Audio flows through three stages: a log-mel front-end, a shared embedding
//! backbone and a fully-connected wakeword classifier. When the activation gate
//! fires, the speaker is verified against an enrolled reference by cosine
//! similarity. The crate also carries the offline tooling around that engine:
//! preprocessing, augmentation and FRR/FAR/EER evaluation.

pub mod audio_io;
pub mod augment;
pub mod backbone;
pub mod binfmt;
pub mod dsp;
pub mod evalkit;
pub mod pipeline;
pub mod rng;
pub mod speaker_auth;
pub mod stream_state;
pub mod wakeword;

pub use audio_io::{read_wav, write_wav, PcmClip, VadParams, SAMPLE_RATE};
pub use backbone::{Embedder, Embedding96, EmbedderSpec, MelWindow, EMBEDDING_DIM};
pub use dsp::{MelConfig, MelExtractor, MelFrame};
pub use evalkit::{EerMethod, EerResult, ScoreSet, SweepPoint};
pub use pipeline::{DetectionEvent, Engine, PipelineConfig};
pub use rng::SplitMix64;
pub use speaker_auth::{Approach, AuthConfig, AuthResult, ReferenceProfile, VoiceEncoderSpec};
pub use stream_state::{ClientState, RingBuffer};
pub use wakeword::{FcnModel, GateAction, GateState, TrainConfig, WakewordScorer};
