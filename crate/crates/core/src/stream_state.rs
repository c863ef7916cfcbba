//! Per-client buffers: raw audio, mel frames and per-wakeword embeddings.
//!
//! Every buffer tracks absolute positions (samples or frames since the client
//! connected) so that later stages can ask for data "as of" a point in the
//! stream rather than "whatever is newest right now". That is what keeps the
//! threaded engine's output identical to the single-threaded one.

use std::collections::{BTreeMap, VecDeque};
use std::time::Instant;

use crate::backbone::{Embedding96, MelWindow};
use crate::dsp::MelFrame;

/// Samples fed to the mel front-end at a time.
pub const MEL_SAMPLES: usize = 1760;

const PENDING_WARN_SAMPLES: usize = 10 * 16_000;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("unknown wakeword key {0:?}")]
    UnknownWakewordKey(String),
    #[error("need {needed} samples ending at {end}, only {available} available")]
    InsufficientAudio {
        needed: usize,
        available: usize,
        end: u64,
    },
}

/// Fixed-capacity buffer that overwrites its oldest elements.
#[derive(Debug, Clone)]
pub struct RingBuffer<T> {
    storage: Vec<T>,
    capacity: usize,
    write_pos: usize,
    filled: usize,
    total: u64,
}

impl<T: Clone> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Self {
            storage: Vec::with_capacity(capacity),
            capacity,
            write_pos: 0,
            filled: 0,
            total: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    /// Elements pushed over the buffer's lifetime.
    pub fn total_pushed(&self) -> u64 {
        self.total
    }

    pub fn push(&mut self, value: T) {
        if self.storage.len() < self.capacity {
            self.storage.push(value);
        } else {
            self.storage[self.write_pos] = value;
        }
        self.write_pos = (self.write_pos + 1) % self.capacity;
        self.filled = (self.filled + 1).min(self.capacity);
        self.total += 1;
    }

    pub fn extend_from_slice(&mut self, values: &[T]) {
        // only the tail can survive
        let skip = values.len().saturating_sub(self.capacity);
        self.total += skip as u64;
        for v in &values[skip..] {
            self.push(v.clone());
        }
    }

    /// `i`-th oldest retained element.
    pub fn get(&self, i: usize) -> Option<&T> {
        if i >= self.filled {
            return None;
        }
        let start = (self.write_pos + self.capacity - self.filled) % self.capacity;
        Some(&self.storage[(start + i) % self.capacity])
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (0..self.filled).map(move |i| self.get(i).unwrap())
    }

    /// Retained elements in `[start, end)` counted from the oldest.
    pub fn range(&self, start: usize, end: usize) -> Vec<T> {
        (start..end).map(|i| self.get(i).unwrap().clone()).collect()
    }

    /// Newest `n` elements, oldest first.
    pub fn latest(&self, n: usize) -> Option<Vec<T>> {
        (n <= self.filled).then(|| self.range(self.filled - n, self.filled))
    }
}

/// Takes the next window from a ring with a pending-element counter.
///
/// The window ends `pending - step` elements before the newest one, pulled
/// back into the retained history if that would reach past the oldest element.
fn take_strided<T: Clone>(
    ring: &RingBuffer<T>,
    pending: &mut usize,
    len: usize,
    step: usize,
) -> Option<(Vec<T>, u64)> {
    if *pending < step || ring.len() < len {
        return None;
    }
    let offset = (*pending - step).min(ring.len() - len);
    let end = ring.len() - offset;
    *pending -= step;
    let end_abs = ring.total_pushed() - offset as u64;
    Some((ring.range(end - len, end), end_abs))
}

/// Caps the pending counter so the next window cannot end before the first
/// position that has `len` elements of history.
fn align_pending(filled: u64, pending: &mut usize, len: usize, step: usize) {
    if filled >= len as u64 {
        let cap = (filled - len as u64 + step as u64).min(usize::MAX as u64) as usize;
        *pending = (*pending).min(cap);
    }
}

/// A value tagged with the audio position (exclusive end, in samples) it covers.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamped<T> {
    pub value: T,
    pub audio_end: u64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTrack {
    pub ring: RingBuffer<Stamped<Embedding96>>,
    pub new_embeddings: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferConfig {
    pub audio_capacity: usize,
    pub mel_capacity: usize,
    pub embedding_capacity: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            audio_capacity: 48_000,
            mel_capacity: 512,
            embedding_capacity: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: String,
    pub audio_ring: RingBuffer<f64>,
    pub mel_ring: RingBuffer<Stamped<MelFrame>>,
    pub pending_audio: VecDeque<f64>,
    pub new_mels: usize,
    pub embeddings: BTreeMap<String, EmbeddingTrack>,
    pub last_update: Instant,
    /// Samples handed to the mel front-end so far.
    pub chunked_samples: u64,
    pub chunks_taken: u64,
    embedding_capacity: usize,
    warned_pending: bool,
}

impl ClientState {
    pub fn new(client_id: impl Into<String>, buffers: BufferConfig) -> Self {
        Self {
            client_id: client_id.into(),
            audio_ring: RingBuffer::new(buffers.audio_capacity),
            mel_ring: RingBuffer::new(buffers.mel_capacity),
            pending_audio: VecDeque::new(),
            new_mels: 0,
            embeddings: BTreeMap::new(),
            last_update: Instant::now(),
            chunked_samples: 0,
            chunks_taken: 0,
            embedding_capacity: buffers.embedding_capacity,
            warned_pending: false,
        }
    }

    pub fn register_wakeword(&mut self, key: impl Into<String>) {
        let ring = RingBuffer::new(self.embedding_capacity);
        self.embeddings.entry(key.into()).or_insert(EmbeddingTrack {
            ring,
            new_embeddings: 0,
        });
    }

    pub fn track(&self, key: &str) -> Result<&EmbeddingTrack, StreamError> {
        self.embeddings
            .get(key)
            .ok_or_else(|| StreamError::UnknownWakewordKey(key.to_string()))
    }

    fn track_mut(&mut self, key: &str) -> Result<&mut EmbeddingTrack, StreamError> {
        self.embeddings
            .get_mut(key)
            .ok_or_else(|| StreamError::UnknownWakewordKey(key.to_string()))
    }

    pub fn audio_total(&self) -> u64 {
        self.audio_ring.total_pushed()
    }

    pub fn push_audio(&mut self, samples: &[f64]) {
        if samples.is_empty() {
            return;
        }
        self.audio_ring.extend_from_slice(samples);
        self.pending_audio.extend(samples.iter().copied());
        if self.pending_audio.len() > PENDING_WARN_SAMPLES && !self.warned_pending {
            log::warn!(
                "client {}: {} samples pending mel extraction",
                self.client_id,
                self.pending_audio.len()
            );
            self.warned_pending = true;
        }
    }

    /// Removes the oldest [`MEL_SAMPLES`] pending samples, if that many are queued.
    pub fn take_mel_chunk(&mut self) -> Option<Vec<f64>> {
        self.take_chunk(MEL_SAMPLES)
    }

    pub fn take_chunk(&mut self, size: usize) -> Option<Vec<f64>> {
        if self.pending_audio.len() < size {
            return None;
        }
        let chunk: Vec<f64> = self.pending_audio.drain(..size).collect();
        self.chunked_samples += size as u64;
        self.chunks_taken += 1;
        if self.pending_audio.len() <= PENDING_WARN_SAMPLES {
            self.warned_pending = false;
        }
        Some(chunk)
    }

    /// Appends frames stamped with the end of the most recently taken chunk.
    pub fn append_mels(&mut self, frames: Vec<MelFrame>) {
        if frames.is_empty() {
            return;
        }
        let n = frames.len();
        for frame in frames {
            self.mel_ring.push(Stamped {
                value: frame,
                audio_end: self.chunked_samples,
            });
        }
        self.new_mels = (self.new_mels + n).min(self.mel_ring.len());
        self.last_update = Instant::now();
    }

    /// Latest-by-position window of `emb_features` frames, advancing by `emb_step`.
    pub fn take_embedding_window(
        &mut self,
        emb_features: usize,
        emb_step: usize,
    ) -> Option<Stamped<MelWindow>> {
        debug_assert!(emb_features >= emb_step && emb_step >= 1);
        let (frames, _) = take_strided(&self.mel_ring, &mut self.new_mels, emb_features, emb_step)?;
        let audio_end = frames.last().map_or(0, |f| f.audio_end);
        Some(Stamped {
            value: MelWindow::new(frames.into_iter().map(|f| f.value).collect()),
            audio_end,
        })
    }

    /// Drops warm-up credit so the first window ends at the first frame with
    /// full history and later ones follow every `emb_step` frames.
    pub fn align_new_mels(&mut self, emb_features: usize, emb_step: usize) {
        align_pending(
            self.mel_ring.total_pushed(),
            &mut self.new_mels,
            emb_features,
            emb_step,
        );
        self.new_mels = self.new_mels.min(self.mel_ring.len());
    }

    pub fn append_embedding(
        &mut self,
        ww_key: &str,
        emb: Embedding96,
        audio_end: u64,
    ) -> Result<(), StreamError> {
        let track = self.track_mut(ww_key)?;
        track.ring.push(Stamped {
            value: emb,
            audio_end,
        });
        track.new_embeddings = (track.new_embeddings + 1).min(track.ring.len());
        self.last_update = Instant::now();
        Ok(())
    }

    pub fn align_new_embeddings(&mut self, ww_key: &str, ww_windows: usize) -> Result<(), StreamError> {
        let track = self.track_mut(ww_key)?;
        align_pending(
            track.ring.total_pushed(),
            &mut track.new_embeddings,
            ww_windows,
            1,
        );
        Ok(())
    }

    /// Next `ww_windows`-long run of embeddings, advancing by one.
    pub fn take_ww_window(
        &mut self,
        ww_key: &str,
        ww_windows: usize,
    ) -> Result<Option<Stamped<Vec<Embedding96>>>, StreamError> {
        let track = self.track_mut(ww_key)?;
        Ok(
            take_strided(&track.ring, &mut track.new_embeddings, ww_windows, 1).map(|(items, _)| {
                let audio_end = items.last().map_or(0, |e| e.audio_end);
                Stamped {
                    value: items.into_iter().map(|e| e.value).collect(),
                    audio_end,
                }
            }),
        )
    }

    /// Most recent `n` samples, oldest first.
    pub fn recent_audio(&self, n: usize) -> Result<Vec<f64>, StreamError> {
        self.audio_until(self.audio_total(), n)
    }

    /// The `n` samples ending at absolute position `end`.
    pub fn audio_until(&self, end: u64, n: usize) -> Result<Vec<f64>, StreamError> {
        let total = self.audio_total();
        let oldest = total - self.audio_ring.len() as u64;
        let insufficient = |available: u64| StreamError::InsufficientAudio {
            needed: n,
            available: available as usize,
            end,
        };
        if end > total {
            return Err(insufficient(0));
        }
        let available = end.saturating_sub(oldest);
        if available < n as u64 {
            return Err(insufficient(available));
        }
        let stop = (end - oldest) as usize;
        Ok(self.audio_ring.range(stop - n, stop))
    }
}
