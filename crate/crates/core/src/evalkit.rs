//! FRR/FAR at a threshold, the 0.05-step threshold sweep, equal error rate,
//! per-category score collection and CSV reports.
//!
//! A score is accepted iff `score >= threshold`, everywhere.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio_io::{read_wav, AudioError};
use crate::pipeline::{Engine, PipelineError};
use crate::speaker_auth::{clip_similarity, AuthError};
use crate::wakeword::GateAction;

pub const SWEEP_POINTS: usize = 21;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no positive scores")]
    EmptyPositives,
    #[error("no negative scores")]
    EmptyNegatives,
    #[error("score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("report: {0}")]
    Report(String),
    #[error("no engine profile for authentication scoring")]
    NoProfile,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Wakeword,
    Auth,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "wakeword" => Ok(Task::Wakeword),
            "auth" => Ok(Task::Auth),
            other => Err(format!("unknown task {other:?}, expected wakeword or auth")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
    pub task: Task,
}

impl ScoreSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>, task: Task) -> Self {
        Self {
            positives,
            negatives,
            task,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.positives.is_empty() {
            return Err(EvalError::EmptyPositives);
        }
        if self.negatives.is_empty() {
            return Err(EvalError::EmptyNegatives);
        }
        match self
            .positives
            .iter()
            .chain(&self.negatives)
            .find(|s| !(0.0..=1.0).contains(*s))
        {
            Some(&s) => Err(EvalError::InvalidScore(s)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub frr: f64,
    pub far: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EerMethod {
    SweepInterpolated,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
    pub method: EerMethod,
}

/// Fraction of positives rejected: `#{s < t} / |P|`.
pub fn frr(positives: &[f64], t: f64) -> Result<f64, EvalError> {
    if positives.is_empty() {
        return Err(EvalError::EmptyPositives);
    }
    Ok(positives.iter().filter(|&&s| s < t).count() as f64 / positives.len() as f64)
}

/// Fraction of negatives accepted: `#{s >= t} / |N|`.
pub fn far(negatives: &[f64], t: f64) -> Result<f64, EvalError> {
    if negatives.is_empty() {
        return Err(EvalError::EmptyNegatives);
    }
    Ok(negatives.iter().filter(|&&s| s >= t).count() as f64 / negatives.len() as f64)
}

pub fn sweep_thresholds() -> impl Iterator<Item = f64> {
    (0..SWEEP_POINTS).map(|i| i as f64 / 20.0)
}

pub fn sweep(scores: &ScoreSet) -> Result<Vec<SweepPoint>, EvalError> {
    scores.validate()?;
    sweep_thresholds()
        .map(|t| {
            Ok(SweepPoint {
                threshold: t,
                frr: frr(&scores.positives, t)?,
                far: far(&scores.negatives, t)?,
            })
        })
        .collect()
}

pub fn eer(scores: &ScoreSet, method: EerMethod) -> Result<EerResult, EvalError> {
    match method {
        EerMethod::SweepInterpolated => Ok(interpolate_crossing(&sweep(scores)?)),
        EerMethod::Exact => exact_eer(scores),
    }
}

/// Linear crossing of the two curves between the first pair of sweep points
/// where `far - frr` changes sign. Without a crossing, the point with the
/// smallest gap is used and the two rates are averaged.
pub fn interpolate_crossing(points: &[SweepPoint]) -> EerResult {
    let result = |eer: f64, threshold: f64| EerResult {
        eer,
        threshold,
        method: EerMethod::SweepInterpolated,
    };
    let diff = |p: &SweepPoint| p.far - p.frr;
    for pair in points.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if diff(a) == 0.0 {
            return result(a.frr, a.threshold);
        }
        if diff(a) > 0.0 && diff(b) <= 0.0 {
            let w = diff(a) / (diff(a) - diff(b));
            let t = a.threshold + w * (b.threshold - a.threshold);
            let rate = a.frr + w * (b.frr - a.frr);
            return result(rate, t);
        }
    }
    let best = points
        .iter()
        .min_by(|a, b| diff(a).abs().total_cmp(&diff(b).abs()))
        .expect("non-empty sweep");
    result((best.frr + best.far) / 2.0, best.threshold)
}

/// Enumerates every distinct cut point, picks the threshold minimizing
/// `max(frr, far)` (then `|frr - far|`, then the threshold itself) and
/// reports the mean of the two rates there.
fn exact_eer(scores: &ScoreSet) -> Result<EerResult, EvalError> {
    scores.validate()?;
    let mut candidates: Vec<f64> = scores.positives.iter().chain(&scores.negatives).copied().collect();
    candidates.push(0.0);
    candidates.push(1.0 + 1e-9);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let mut pos = scores.positives.clone();
    let mut neg = scores.negatives.clone();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);

    let mut best: Option<(f64, f64, f64, f64)> = None;
    for t in candidates {
        let fr = pos.partition_point(|&s| s < t) as f64 / np;
        let fa = (neg.len() - neg.partition_point(|&s| s < t)) as f64 / nn;
        let key = (fr.max(fa), (fr - fa).abs());
        let better = match best {
            None => true,
            Some((m, g, _, _)) => key.0 < m || (key.0 == m && key.1 < g),
        };
        if better {
            best = Some((key.0, key.1, t, (fr + fa) / 2.0));
        }
    }
    let (_, _, threshold, eer) = best.expect("at least two candidates");
    Ok(EerResult {
        eer,
        threshold,
        method: EerMethod::Exact,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "voice-authp")]
    VoiceAuthP,
    #[serde(rename = "voice-authn")]
    VoiceAuthN,
    #[serde(rename = "tts-wwp")]
    TtsWwP,
    #[serde(rename = "tts-wwn")]
    TtsWwN,
    #[serde(rename = "conversation")]
    Conversation,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::VoiceAuthP,
        Category::VoiceAuthN,
        Category::TtsWwP,
        Category::TtsWwN,
        Category::Conversation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::VoiceAuthP => "voice-authp",
            Category::VoiceAuthN => "voice-authn",
            Category::TtsWwP => "tts-wwp",
            Category::TtsWwN => "tts-wwn",
            Category::Conversation => "conversation",
        }
    }

    /// `Some(true)` for a positive, `Some(false)` for a negative, `None` when
    /// the category does not take part in the task.
    pub fn polarity(self, task: Task) -> Option<bool> {
        match (task, self) {
            (Task::Wakeword, Category::VoiceAuthP | Category::VoiceAuthN | Category::TtsWwP) => Some(true),
            (Task::Wakeword, Category::TtsWwN | Category::Conversation) => Some(false),
            (Task::Auth, Category::VoiceAuthP) => Some(true),
            (Task::Auth, Category::VoiceAuthN) => Some(false),
            (Task::Auth, _) => None,
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown category {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub category: Category,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    /// Parses `path,category` CSV. Relative paths are resolved against `base`.
    pub fn from_reader(reader: impl Read, base: &Path) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "category"] {
            return Err(EvalError::Manifest(format!(
                "expected header path,category, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut entries = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let category = record[1]
                .parse()
                .map_err(|e| EvalError::Manifest(format!("row {}: {e}", line + 2)))?;
            let path = PathBuf::from(&record[0]);
            entries.push(ManifestEntry {
                path: if path.is_absolute() { path } else { base.join(path) },
                category,
            });
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvalError> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_reader(std::fs::File::open(path)?, base)
    }

    pub fn count(&self, category: Category) -> usize {
        self.entries.iter().filter(|e| e.category == category).count()
    }
}

/// How a clip is reduced to one wakeword score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WakewordScoring {
    /// Maximum raw classifier probability over the clip.
    #[default]
    MaxProbability,
    /// 1.0 if the activation gate fired anywhere in the clip, else 0.0.
    GateFired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedClip {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectedScores {
    pub scores: ScoreSet,
    pub skipped: Vec<SkippedClip>,
}

#[derive(Debug, thiserror::Error)]
enum ClipError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("clip of {0} samples is shorter than one mel chunk")]
    TooShort(usize),
}

fn score_entry(engine: &Engine, entry: &ManifestEntry, task: Task, mode: WakewordScoring) -> Result<f64, ClipError> {
    let clip = read_wav(&entry.path)?;
    if clip.len() < engine.config().mel_samples {
        return Err(ClipError::TooShort(clip.len()));
    }
    match task {
        Task::Wakeword => {
            let classified = engine.score_clip(&clip.samples)?;
            Ok(match mode {
                WakewordScoring::MaxProbability => classified.iter().fold(0.0, |m, c| c.probability.max(m)),
                WakewordScoring::GateFired => {
                    let fired = classified.iter().any(|c| c.action == GateAction::Triggered);
                    if fired {
                        1.0
                    } else {
                        0.0
                    }
                }
            })
        }
        Task::Auth => {
            let profile = engine.profile().expect("checked by caller");
            let sim = clip_similarity(
                profile,
                &clip.samples,
                engine.encoder(),
                engine.features_a(),
                &engine.config().auth,
            )?;
            // negative cosine means rejection at every threshold in [0, 1]
            Ok(sim.clamp(0.0, 1.0))
        }
    }
}

/// Scores every manifest clip that takes part in `task`. Unreadable or
/// too-short clips are skipped and reported rather than failing the run.
/// Work is spread over threads; output follows manifest order.
pub fn collect_scores(
    engine: &Engine,
    manifest: &DatasetManifest,
    task: Task,
    mode: WakewordScoring,
) -> Result<CollectedScores, EvalError> {
    if task == Task::Auth && engine.profile().is_none() {
        return Err(EvalError::NoProfile);
    }
    let selected: Vec<(&ManifestEntry, bool)> = manifest
        .entries
        .iter()
        .filter_map(|e| e.category.polarity(task).map(|p| (e, p)))
        .collect();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(selected.len().max(1));
    let per = selected.len().div_ceil(threads).max(1);
    let results: Vec<Result<f64, ClipError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = selected
            .chunks(per)
            .map(|chunk| {
                scope.spawn(move || {
                    chunk
                        .iter()
                        .map(|(e, _)| score_entry(engine, e, task, mode))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("scoring thread")).collect()
    });

    let mut scores = ScoreSet::new(Vec::new(), Vec::new(), task);
    let mut skipped = Vec::new();
    for ((entry, positive), result) in selected.into_iter().zip(results) {
        match result {
            Ok(s) if positive => scores.positives.push(s),
            Ok(s) => scores.negatives.push(s),
            Err(e) => {
                log::warn!("skipping {}: {e}", entry.path.display());
                skipped.push(SkippedClip {
                    path: entry.path.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(CollectedScores { scores, skipped })
}

/// `threshold,frr,far` rows followed by `eer,<eer>,<threshold>`.
pub fn format_report(points: &[SweepPoint], eer: &EerResult) -> String {
    let mut out = String::from("threshold,frr,far\n");
    for p in points {
        out.push_str(&format!("{:.6},{:.6},{:.6}\n", p.threshold, p.frr, p.far));
    }
    out.push_str(&format!("eer,{:.6},{:.6}\n", eer.eer, eer.threshold));
    out
}

pub fn write_report(points: &[SweepPoint], eer: &EerResult, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(format_report(points, eer).as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedReport {
    pub points: Vec<SweepPoint>,
    pub eer: f64,
    pub threshold: f64,
}

pub fn parse_report(reader: impl Read) -> Result<ParsedReport, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != ["threshold", "frr", "far"] {
        return Err(EvalError::Report("bad header".into()));
    }
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| EvalError::Report(format!("not a number: {s:?}")))
    };
    let mut points = Vec::new();
    let mut summary = None;
    for record in rdr.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(EvalError::Report("rows must have three fields".into()));
        }
        if summary.is_some() {
            return Err(EvalError::Report("rows after the summary line".into()));
        }
        if &record[0] == "eer" {
            summary = Some((num(&record[1])?, num(&record[2])?));
        } else {
            points.push(SweepPoint {
                threshold: num(&record[0])?,
                frr: num(&record[1])?,
                far: num(&record[2])?,
            });
        }
    }
    let (eer, threshold) = summary.ok_or_else(|| EvalError::Report("missing eer line".into()))?;
    Ok(ParsedReport {
        points,
        eer,
        threshold,
    })
}
