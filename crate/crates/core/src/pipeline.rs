//! Three-stage streaming engine: mel front-end, shared embedding extraction,
//! and wakeword classification with gated speaker authentication.
//!
//! [`Engine::step`] runs everything on the caller's thread. [`run_stream`]
//! runs one worker per stage, handing work along with per-client readiness
//! messages. Both modes drive the same stage functions over the same
//! per-client state, and every decision depends only on stream positions, so
//! they emit identical per-client event sequences.
//!
//! The pre-processing worker may run ahead of classification, but never so
//! far that audio still needed by a pending authentication falls out of the
//! client's audio ring.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};

use crate::backbone::{Embedder, Embedding96, MelWindow, ModelError};
use crate::dsp::{DspError, MelConfig, MelExtractor};
use crate::speaker_auth::{
    authenticate_at, Approach, ApproachAFeatures, AuthConfig, ReferenceProfile, VoiceEncoderSpec,
};
use crate::stream_state::{BufferConfig, ClientState, Stamped, StreamError};
use crate::wakeword::{GateAction, GateState, WakewordScorer};

pub const DEFAULT_WW_KEY: &str = "default";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("unknown client {0:?}")]
    UnknownClient(String),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("source {client}: {source}")]
    Source {
        client: String,
        #[source]
        source: io::Error,
    },
    #[error("event sink: {0}")]
    Sink(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub mel_samples: usize,
    pub emb_features: usize,
    pub emb_step: usize,
    pub ww_windows: usize,
    pub wake_threshold: f64,
    pub trigger_level: u32,
    pub cooldown_frames: u32,
    pub audio_capacity: usize,
    pub mel_capacity: usize,
    pub embedding_capacity: usize,
    pub auth: AuthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let buffers = BufferConfig::default();
        Self {
            mel_samples: 1760,
            emb_features: 76,
            emb_step: 8,
            ww_windows: 16,
            wake_threshold: 0.5,
            trigger_level: 4,
            cooldown_frames: 20,
            audio_capacity: buffers.audio_capacity,
            mel_capacity: buffers.mel_capacity,
            embedding_capacity: buffers.embedding_capacity,
            auth: AuthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn buffers(&self) -> BufferConfig {
        BufferConfig {
            audio_capacity: self.audio_capacity,
            mel_capacity: self.mel_capacity,
            embedding_capacity: self.embedding_capacity,
        }
    }

    /// Largest amount of audio any authentication reads.
    pub fn auth_samples(&self) -> usize {
        self.auth.required_samples()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, v) in [
            ("mel_samples", self.mel_samples),
            ("emb_features", self.emb_features),
            ("emb_step", self.emb_step),
            ("ww_windows", self.ww_windows),
            ("trigger_level", self.trigger_level as usize),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.emb_step > self.emb_features {
            return bad("emb_step must not exceed emb_features".into());
        }
        for (name, t) in [
            ("wake_threshold", self.wake_threshold),
            ("auth_threshold", self.auth.auth_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if MelConfig::pipeline().frame_count(self.mel_samples) == 0 {
            return bad("mel_samples shorter than one mel window".into());
        }
        if self.mel_capacity < self.emb_features + self.emb_step {
            return bad("mel_capacity must hold emb_features + emb_step frames".into());
        }
        if self.embedding_capacity < self.ww_windows + 1 {
            return bad("embedding_capacity must exceed ww_windows".into());
        }
        if self.audio_capacity < self.auth_samples() + self.mel_samples {
            return bad(format!(
                "audio_capacity must be at least {} samples",
                self.auth_samples() + self.mel_samples
            ));
        }
        if self.auth.a_required_samples
            < MelConfig::approach_a().samples_for_frames(self.auth.a_num_frames)
        {
            return bad("a_required_samples too short for a_num_frames".into());
        }
        Ok(())
    }
}

/// One triggered detection and its authentication outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub client_id: String,
    pub audio_time: u64,
    pub probability: f64,
    pub similarity: Option<f64>,
    pub auth_success: bool,
    pub approach: Approach,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl DetectionEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

/// Raw classifier output before gating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub audio_end: u64,
    pub probability: f64,
    pub action: GateAction,
}

/// Per-client processing state shared by the stages.
#[derive(Debug, Clone)]
pub struct ClientRuntime {
    pub state: ClientState,
    pub gate: GateState,
    pub mel_frames: u64,
    pub embeddings: u64,
    pub classified: u64,
    pub classifications: Vec<Classification>,
    record_classifications: bool,
    capture_windows: bool,
    captured: Vec<Vec<Embedding96>>,
    /// Audio position up to which every stage has finished its work.
    drained_through: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClientStats {
    pub samples: u64,
    pub chunks: u64,
    pub mel_frames: u64,
    pub embeddings: u64,
    pub classifications: u64,
}

pub trait EventSink {
    fn emit(&mut self, event: &DetectionEvent) -> Result<(), PipelineError>;
}

impl EventSink for Vec<DetectionEvent> {
    fn emit(&mut self, event: &DetectionEvent) -> Result<(), PipelineError> {
        self.push(event.clone());
        Ok(())
    }
}

/// Writes one JSON object per line, flushing after each event.
pub struct JsonLinesSink<W: Write> {
    writer: W,
}

impl<W: Write> JsonLinesSink<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> EventSink for JsonLinesSink<W> {
    fn emit(&mut self, event: &DetectionEvent) -> Result<(), PipelineError> {
        writeln!(self.writer, "{}", event.to_json_line())
            .and_then(|_| self.writer.flush())
            .map_err(|e| PipelineError::Sink(e.to_string()))
    }
}

pub fn emit_event_log(events: &[DetectionEvent], path: impl AsRef<Path>) -> Result<(), PipelineError> {
    let file = std::fs::File::create(path)?;
    let mut sink = JsonLinesSink::new(io::BufWriter::new(file));
    for e in events {
        sink.emit(e)?;
    }
    sink.into_inner().flush()?;
    Ok(())
}

pub fn parse_event_log(reader: impl BufRead) -> Result<Vec<DetectionEvent>, PipelineError> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| PipelineError::Io(io::Error::new(io::ErrorKind::InvalidData, e)))?,
        );
    }
    Ok(out)
}

/// A pull-based audio source. `read` returns 0 at end of stream.
pub trait SampleSource: Send {
    fn read(&mut self, buf: &mut [f64]) -> io::Result<usize>;
}

pub struct ClipSource {
    samples: Vec<f64>,
    pos: usize,
}

impl ClipSource {
    pub fn new(samples: Vec<f64>) -> Self {
        Self { samples, pos: 0 }
    }
}

impl SampleSource for ClipSource {
    fn read(&mut self, buf: &mut [f64]) -> io::Result<usize> {
        let n = buf.len().min(self.samples.len() - self.pos);
        buf[..n].copy_from_slice(&self.samples[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Headerless 16-bit little-endian mono PCM from any reader.
pub struct Pcm16Source<R> {
    reader: R,
    carry: Option<u8>,
    bytes: Vec<u8>,
}

impl<R: Read + Send> Pcm16Source<R> {
    pub fn new(reader: R) -> Self {
        Self {
            reader,
            carry: None,
            bytes: Vec::new(),
        }
    }
}

impl<R: Read + Send> SampleSource for Pcm16Source<R> {
    fn read(&mut self, buf: &mut [f64]) -> io::Result<usize> {
        self.bytes.resize(buf.len() * 2, 0);
        loop {
            let offset = usize::from(self.carry.is_some());
            if let Some(b) = self.carry {
                self.bytes[0] = b;
            }
            let n = match self.reader.read(&mut self.bytes[offset..]) {
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            };
            if n == 0 {
                // a dangling odd byte at EOF is dropped
                return Ok(0);
            }
            let total = n + offset;
            let whole = total / 2;
            self.carry = (total % 2 == 1).then(|| self.bytes[total - 1]);
            if whole == 0 {
                continue;
            }
            for (slot, b) in buf.iter_mut().zip(self.bytes[..whole * 2].chunks_exact(2)) {
                *slot = crate::audio_io::sample_from_i16(i16::from_le_bytes([b[0], b[1]]));
            }
            return Ok(whole);
        }
    }
}

pub struct Engine {
    config: PipelineConfig,
    mel: MelExtractor,
    embedder: Arc<dyn Embedder>,
    scorer: Arc<dyn WakewordScorer>,
    encoder: VoiceEncoderSpec,
    features_a: ApproachAFeatures,
    profile: Option<ReferenceProfile>,
    clients: BTreeMap<String, ClientRuntime>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("config", &self.config)
            .field("clients", &self.clients.keys().collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// `config.auth.wake_threshold` is overwritten with `config.wake_threshold`.
    pub fn new(
        mut config: PipelineConfig,
        embedder: Arc<dyn Embedder>,
        scorer: Arc<dyn WakewordScorer>,
        encoder: VoiceEncoderSpec,
        profile: Option<ReferenceProfile>,
    ) -> Result<Self, PipelineError> {
        config.auth.wake_threshold = config.wake_threshold;
        config.validate()?;
        if embedder.emb_features() != config.emb_features {
            return Err(PipelineError::Config(format!(
                "embedder expects {} mel frames, config has emb_features {}",
                embedder.emb_features(),
                config.emb_features
            )));
        }
        if scorer.ww_windows() != config.ww_windows {
            return Err(PipelineError::Config(format!(
                "classifier expects {} embeddings, config has ww_windows {}",
                scorer.ww_windows(),
                config.ww_windows
            )));
        }
        if encoder.chunk_samples != config.auth.b_chunk_samples {
            return Err(PipelineError::Config("encoder chunk size differs from b_chunk_samples".into()));
        }
        Ok(Self {
            features_a: ApproachAFeatures::new(config.auth.a_num_frames),
            mel: MelExtractor::new(MelConfig::pipeline())?,
            config,
            embedder,
            scorer,
            encoder,
            profile,
            clients: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn profile(&self) -> Option<&ReferenceProfile> {
        self.profile.as_ref()
    }

    pub fn encoder(&self) -> &VoiceEncoderSpec {
        &self.encoder
    }

    pub fn features_a(&self) -> &ApproachAFeatures {
        &self.features_a
    }

    pub fn new_runtime(&self, client_id: &str) -> ClientRuntime {
        let mut state = ClientState::new(client_id, self.config.buffers());
        state.register_wakeword(DEFAULT_WW_KEY);
        ClientRuntime {
            state,
            gate: GateState::new(
                self.config.wake_threshold,
                self.config.trigger_level,
                self.config.cooldown_frames,
            ),
            mel_frames: 0,
            embeddings: 0,
            classified: 0,
            classifications: Vec::new(),
            record_classifications: false,
            capture_windows: false,
            captured: Vec::new(),
            drained_through: 0,
        }
    }

    pub fn register_client(&mut self, client_id: &str) {
        if !self.clients.contains_key(client_id) {
            let rt = self.new_runtime(client_id);
            self.clients.insert(client_id.to_string(), rt);
        }
    }

    pub fn client(&self, client_id: &str) -> Option<&ClientRuntime> {
        self.clients.get(client_id)
    }

    /// Single-threaded processing of `samples` for one registered client.
    pub fn step(&mut self, client_id: &str, samples: &[f64]) -> Result<Vec<DetectionEvent>, PipelineError> {
        let mut rt = self
            .clients
            .remove(client_id)
            .ok_or_else(|| PipelineError::UnknownClient(client_id.to_string()))?;
        let result = self.feed(&mut rt, samples);
        self.clients.insert(client_id.to_string(), rt);
        result
    }

    /// Pushes audio one mel chunk at a time, draining every stage after each.
    pub fn feed(&self, rt: &mut ClientRuntime, samples: &[f64]) -> Result<Vec<DetectionEvent>, PipelineError> {
        let mut events = Vec::new();
        let mut rest = samples;
        while !rest.is_empty() {
            let room = self.config.mel_samples - rt.state.pending_audio.len() % self.config.mel_samples;
            let (head, tail) = rest.split_at(room.min(rest.len()));
            rt.state.push_audio(head);
            rest = tail;
            if self.stage_mels(rt)? {
                self.drain_downstream(rt, &mut events)?;
            }
        }
        Ok(events)
    }

    fn drain_downstream(&self, rt: &mut ClientRuntime, events: &mut Vec<DetectionEvent>) -> Result<(), PipelineError> {
        let windows = self.collect_mel_windows(rt);
        let embedded = self.embed_windows(&windows)?;
        self.store_embeddings(rt, embedded)?;
        events.extend(self.stage_classify(rt)?);
        rt.drained_through = rt.state.chunked_samples;
        Ok(())
    }

    /// Raw per-window probabilities for a clip on a fresh client, plus the
    /// gate actions they would have caused.
    pub fn score_clip(&self, samples: &[f64]) -> Result<Vec<Classification>, PipelineError> {
        let mut rt = self.new_runtime("clip");
        rt.record_classifications = true;
        self.feed(&mut rt, samples)?;
        Ok(rt.classifications)
    }

    /// The embedding runs the classifier sees for a clip on a fresh client,
    /// in order. Used to build training data from the inference path.
    pub fn clip_windows(&self, samples: &[f64]) -> Result<Vec<Vec<Embedding96>>, PipelineError> {
        let mut rt = self.new_runtime("clip");
        rt.capture_windows = true;
        self.feed(&mut rt, samples)?;
        Ok(rt.captured)
    }

    /// Stage 1: turn every complete pending chunk into mel frames.
    fn stage_mels(&self, rt: &mut ClientRuntime) -> Result<bool, PipelineError> {
        let mut any = false;
        while let Some(chunk) = rt.state.take_chunk(self.config.mel_samples) {
            let frames = self.mel.melspectrogram(&chunk)?;
            rt.mel_frames += frames.len() as u64;
            rt.state.append_mels(frames);
            rt.state
                .align_new_mels(self.config.emb_features, self.config.emb_step);
            any = true;
        }
        Ok(any)
    }

    fn collect_mel_windows(&self, rt: &mut ClientRuntime) -> Vec<Stamped<MelWindow>> {
        let mut windows = Vec::new();
        while let Some(w) = rt
            .state
            .take_embedding_window(self.config.emb_features, self.config.emb_step)
        {
            windows.push(w);
        }
        windows
    }

    fn embed_windows(
        &self,
        windows: &[Stamped<MelWindow>],
    ) -> Result<Vec<Stamped<Embedding96>>, PipelineError> {
        let batch: Vec<MelWindow> = windows.iter().map(|w| w.value.clone()).collect();
        let embedded = self.embedder.embed_batch(&batch)?;
        Ok(embedded
            .into_iter()
            .zip(windows)
            .map(|(value, w)| Stamped {
                value,
                audio_end: w.audio_end,
            })
            .collect())
    }

    fn store_embeddings(
        &self,
        rt: &mut ClientRuntime,
        embedded: Vec<Stamped<Embedding96>>,
    ) -> Result<(), PipelineError> {
        for e in embedded {
            rt.state.append_embedding(DEFAULT_WW_KEY, e.value, e.audio_end)?;
            rt.state
                .align_new_embeddings(DEFAULT_WW_KEY, self.config.ww_windows)?;
            rt.embeddings += 1;
        }
        Ok(())
    }

    /// Stage 3: classify every ready window, run the gate, authenticate on trigger.
    fn stage_classify(&self, rt: &mut ClientRuntime) -> Result<Vec<DetectionEvent>, PipelineError> {
        let mut events = Vec::new();
        while let Some(window) = rt
            .state
            .take_ww_window(DEFAULT_WW_KEY, self.config.ww_windows)?
        {
            let probability = self.scorer.score(&window.value)?;
            if rt.capture_windows {
                rt.captured.push(window.value.clone());
            }
            let action = rt.gate.update(probability);
            rt.classified += 1;
            if rt.record_classifications {
                rt.classifications.push(Classification {
                    audio_end: window.audio_end,
                    probability,
                    action,
                });
            }
            if action == GateAction::Triggered {
                events.push(self.authenticate(rt, window.audio_end, probability));
            }
        }
        Ok(events)
    }

    fn authenticate(&self, rt: &ClientRuntime, audio_end: u64, probability: f64) -> DetectionEvent {
        let result = match &self.profile {
            Some(profile) => authenticate_at(
                profile,
                &rt.state,
                audio_end,
                &self.encoder,
                &self.features_a,
                &self.config.auth,
            ),
            None => crate::speaker_auth::AuthResult {
                success: false,
                similarity: None,
                approach: self.config.auth.approach,
                reason: Some("no enrolled profile".into()),
            },
        };
        if result.success {
            log::info!(
                "client {}: Auth Success at {audio_end} (similarity {:?})",
                rt.state.client_id,
                result.similarity
            );
        } else {
            log::info!(
                "client {}: Auth Failed at {audio_end} ({})",
                rt.state.client_id,
                result.reason.as_deref().unwrap_or("")
            );
        }
        DetectionEvent {
            client_id: rt.state.client_id.clone(),
            audio_time: audio_end,
            probability,
            similarity: result.similarity,
            auth_success: result.success,
            approach: result.approach,
            reason: result.reason,
        }
    }
}

pub fn client_stats(rt: &ClientRuntime) -> ClientStats {
    ClientStats {
        samples: rt.state.audio_total(),
        chunks: rt.state.chunks_taken,
        mel_frames: rt.mel_frames,
        embeddings: rt.embeddings,
        classifications: rt.classified,
    }
}

struct Slot {
    rt: Mutex<ClientRuntime>,
    progress: Condvar,
}

#[derive(Clone, Copy)]
struct ChunkReady {
    client: usize,
    chunk_end: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub clients: BTreeMap<String, ClientStats>,
    pub events: usize,
}

/// Runs each stage on its own thread until every source is exhausted.
pub fn run_stream(
    engine: &Engine,
    sources: Vec<(String, Box<dyn SampleSource>)>,
    sink: &mut dyn EventSink,
) -> Result<RunSummary, PipelineError> {
    let config = engine.config;
    let slots: Vec<Slot> = sources
        .iter()
        .map(|(id, _)| Slot {
            rt: Mutex::new(engine.new_runtime(id)),
            progress: Condvar::new(),
        })
        .collect();
    let ids: Vec<String> = sources.iter().map(|(id, _)| id.clone()).collect();
    // push limit relative to the drained watermark
    let lead = (config.audio_capacity + config.mel_samples - config.auth_samples()) as u64;
    let abort = AtomicBool::new(false);
    let first_error: Mutex<Option<PipelineError>> = Mutex::new(None);
    let fail = |e: PipelineError| {
        first_error.lock().unwrap().get_or_insert(e);
        abort.store(true, Ordering::SeqCst);
        for slot in &slots {
            let _guard = slot.rt.lock().unwrap();
            slot.progress.notify_all();
        }
    };

    let (mels_ready_tx, mels_ready_rx) = mpsc::channel::<ChunkReady>();
    let (emb_ready_tx, emb_ready_rx) = mpsc::channel::<ChunkReady>();
    let (event_tx, event_rx) = mpsc::channel::<DetectionEvent>();
    let mut emitted = 0;

    std::thread::scope(|scope| {
        // Pre-processing: read sources round-robin, produce mel frames.
        scope.spawn(|| {
            let mut sources = sources;
            let mut live: Vec<usize> = (0..sources.len()).collect();
            let mut buf = vec![0.0; config.mel_samples];
            while !live.is_empty() && !abort.load(Ordering::SeqCst) {
                live.retain(|&i| {
                    if abort.load(Ordering::SeqCst) {
                        return false;
                    }
                    let n = match sources[i].1.read(&mut buf) {
                        Ok(0) => return false,
                        Ok(n) => n,
                        Err(source) => {
                            fail(PipelineError::Source {
                                client: ids[i].clone(),
                                source,
                            });
                            return false;
                        }
                    };
                    let slot = &slots[i];
                    let mut rt = slot.rt.lock().unwrap();
                    while rt.state.audio_total() + n as u64 > rt.drained_through + lead
                        && !abort.load(Ordering::SeqCst)
                    {
                        rt = slot.progress.wait(rt).unwrap();
                    }
                    rt.state.push_audio(&buf[..n]);
                    match engine.stage_mels(&mut rt) {
                        Ok(true) => {
                            let _ = mels_ready_tx.send(ChunkReady {
                                client: i,
                                chunk_end: rt.state.chunked_samples,
                            });
                        }
                        Ok(false) => {}
                        Err(e) => {
                            drop(rt);
                            fail(e);
                            return false;
                        }
                    }
                    true
                });
            }
            drop(mels_ready_tx);
        });

        // Shared feature extraction: mel windows to embeddings.
        scope.spawn(|| {
            for ready in mels_ready_rx {
                if abort.load(Ordering::SeqCst) {
                    continue;
                }
                let slot = &slots[ready.client];
                let windows = engine.collect_mel_windows(&mut slot.rt.lock().unwrap());
                let stored = engine
                    .embed_windows(&windows)
                    .and_then(|e| engine.store_embeddings(&mut slot.rt.lock().unwrap(), e));
                match stored {
                    Ok(()) => {
                        let _ = emb_ready_tx.send(ready);
                    }
                    Err(e) => fail(e),
                }
            }
            drop(emb_ready_tx);
        });

        // Classification, gating and authentication.
        scope.spawn(|| {
            for ready in emb_ready_rx {
                if abort.load(Ordering::SeqCst) {
                    continue;
                }
                let slot = &slots[ready.client];
                let mut rt = slot.rt.lock().unwrap();
                match engine.stage_classify(&mut rt) {
                    Ok(events) => {
                        rt.drained_through = rt.drained_through.max(ready.chunk_end);
                        slot.progress.notify_all();
                        drop(rt);
                        for e in events {
                            let _ = event_tx.send(e);
                        }
                    }
                    Err(e) => {
                        drop(rt);
                        fail(e);
                    }
                }
            }
            drop(event_tx);
        });

        for event in event_rx {
            if abort.load(Ordering::SeqCst) {
                continue;
            }
            match sink.emit(&event) {
                Ok(()) => emitted += 1,
                Err(e) => fail(e),
            }
        }
    });

    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let clients = ids
        .into_iter()
        .zip(slots)
        .map(|(id, slot)| (id, client_stats(&slot.rt.into_inner().unwrap())))
        .collect();
    Ok(RunSummary {
        clients,
        events: emitted,
    })
}
