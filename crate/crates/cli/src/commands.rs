//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use wakegate::audio_io::{rms_normalize, sample_from_i16, sample_to_i16, vad_trim};
use wakegate::augment::{augment_clip, load_bank, AugmentPlan};
use wakegate::evalkit::{collect_scores, eer, format_report, sweep, Category, DatasetManifest, Task};
use wakegate::pipeline::{run_stream, ClipSource, JsonLinesSink, Pcm16Source, SampleSource};
use wakegate::speaker_auth::{clip_similarity, enroll, ApproachAFeatures};
use wakegate::wakeword::{train, ConstantScorer, LabeledWindow, TrainError};
use wakegate::{
    read_wav, write_wav, Embedder, EmbedderSpec, Engine, FcnModel, PcmClip, ReferenceProfile, VoiceEncoderSpec,
    WakewordScorer, SAMPLE_RATE,
};

use crate::config::AppConfig;
use crate::failure::{CliResult, Failure, Kind, OrFail};

fn backbone(config: &AppConfig) -> CliResult<Arc<dyn Embedder>> {
    let ef = config.pipeline.emb_features;
    let spec = match &config.models.backbone {
        Some(p) => EmbedderSpec::load(p).or_fail_with(Kind::Model, || format!("loading backbone {}", p.display()))?,
        None => EmbedderSpec::native(config.backbone_seed, ef),
    };
    Ok(Arc::new(spec))
}

fn scorer(config: &AppConfig) -> CliResult<Arc<dyn WakewordScorer>> {
    if let Some(probability) = config.constant_score {
        return Ok(Arc::new(ConstantScorer {
            probability,
            ww_windows: config.pipeline.ww_windows,
        }));
    }
    let path = config
        .models
        .classifier
        .as_ref()
        .ok_or_else(|| Failure::msg(Kind::Config, "models.classifier is not set (or set constant_score)"))?;
    let model = FcnModel::load(path).or_fail_with(Kind::Model, || format!("loading classifier {}", path.display()))?;
    Ok(Arc::new(model))
}

fn profile(config: &AppConfig, required: bool) -> CliResult<Option<ReferenceProfile>> {
    match &config.models.profile {
        Some(p) => Ok(Some(
            ReferenceProfile::load(p).or_fail_with(Kind::Model, || format!("loading profile {}", p.display()))?,
        )),
        None if required => Err(Failure::msg(Kind::Config, "models.profile is not set")),
        None => Ok(None),
    }
}

fn encoder(config: &AppConfig) -> VoiceEncoderSpec {
    VoiceEncoderSpec::native(config.encoder_seed)
}

fn engine(config: &AppConfig, scorer: Arc<dyn WakewordScorer>, profile: Option<ReferenceProfile>) -> CliResult<Engine> {
    Engine::new(config.pipeline, backbone(config)?, scorer, encoder(config), profile).or_fail(Kind::Model)
}

/// Engine for feature extraction only; the classifier is never consulted.
fn feature_engine(config: &AppConfig) -> CliResult<Engine> {
    let placeholder = Arc::new(ConstantScorer {
        probability: 0.0,
        ww_windows: config.pipeline.ww_windows,
    });
    engine(config, placeholder, None)
}

/// Sorted `.wav` files directly inside `dir`.
fn wav_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).or_fail_with(Kind::Data, || format!("reading directory {}", dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "clip".into(), |n| n.to_string_lossy().into_owned())
}

/// Maps `f` over `items` on scoped threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let per = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|chunk| s.spawn(|| chunk.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker thread")).collect()
    })
}

/// Rounds to the 16-bit grid, as a write/read cycle would.
fn quantize(clip: &mut PcmClip) {
    for s in &mut clip.samples {
        *s = sample_from_i16(sample_to_i16(*s));
    }
}

pub fn detect(config: &AppConfig, inputs: &[PathBuf], out: &mut dyn Write) -> CliResult<()> {
    let profile = profile(config, false)?;
    let engine = engine(config, scorer(config)?, profile)?;
    let from_stdin = inputs.is_empty() || inputs.iter().any(|p| p.as_os_str() == "-");
    if from_stdin {
        if inputs.len() > 1 {
            return Err(Failure::msg(Kind::Config, "standard input cannot be mixed with files"));
        }
        let source: Box<dyn SampleSource> = Box::new(Pcm16Source::new(io::stdin()));
        let mut sink = JsonLinesSink::new(out);
        run_stream(&engine, vec![("stdin".to_string(), source)], &mut sink).or_fail(Kind::Data)?;
        return Ok(());
    }

    let mut names = BTreeSet::new();
    let mut sources = Vec::new();
    for path in inputs {
        let name = file_name(path);
        if !names.insert(name.clone()) {
            return Err(Failure::msg(Kind::Config, format!("two inputs share the client name {name:?}")));
        }
        let clip = read_wav(path).or_fail_with(Kind::Data, || format!("reading {}", path.display()))?;
        sources.push((name, Box::new(ClipSource::new(clip.samples)) as Box<dyn SampleSource>));
    }
    let order: Vec<String> = sources.iter().map(|(n, _)| n.clone()).collect();
    let mut events = Vec::new();
    run_stream(&engine, sources, &mut events).or_fail(Kind::Data)?;
    // clients interleave nondeterministically; print each file's log in input order
    let mut sink = JsonLinesSink::new(out);
    for name in &order {
        for event in events.iter().filter(|e| &e.client_id == name) {
            wakegate::pipeline::EventSink::emit(&mut sink, event).or_fail(Kind::Data)?;
        }
    }
    Ok(())
}

pub fn enroll_cmd(config: &AppConfig, clips_dir: &Path, out_path: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let target = out_path
        .map(Path::to_path_buf)
        .or_else(|| config.models.profile.clone())
        .ok_or_else(|| Failure::msg(Kind::Config, "no output path: pass --out or set models.profile"))?;
    let auth = &config.pipeline.auth;
    let need = auth.required_samples().max(auth.b_chunk_samples);
    let mut usable = Vec::new();
    for path in wav_files(clips_dir)? {
        match read_wav(&path) {
            Ok(clip) if clip.len() >= need => usable.push((file_name(&path), clip.samples)),
            Ok(clip) => warn!(
                "skipping {}: {} samples, enrollment needs {need}",
                path.display(),
                clip.len()
            ),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    if usable.is_empty() {
        return Err(Failure::msg(
            Kind::Data,
            format!("no usable enrollment clips in {}", clips_dir.display()),
        ));
    }
    let clips: Vec<Vec<f64>> = usable.iter().map(|(_, s)| s.clone()).collect();
    let encoder = encoder(config);
    let profile = enroll(&clips, &encoder, auth).or_fail(Kind::Data)?;
    profile
        .save(&target)
        .or_fail_with(Kind::Data, || format!("writing {}", target.display()))?;
    let features_a = ApproachAFeatures::new(auth.a_num_frames);
    let w = |r: io::Result<()>| r.or_fail(Kind::Data);
    w(writeln!(out, "enrolled {} clips into {}", profile.enrolled_clips, target.display()))?;
    for (name, samples) in &usable {
        let sim = clip_similarity(&profile, samples, &encoder, &features_a, auth).or_fail(Kind::Data)?;
        w(writeln!(out, "  {name}: similarity {sim:.4}"))?;
    }
    Ok(())
}

pub fn train_cmd(
    config: &AppConfig,
    positives: &Path,
    negatives: &Path,
    out_path: Option<&Path>,
    loss_csv: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let target = out_path
        .map(Path::to_path_buf)
        .or_else(|| config.models.classifier.clone())
        .ok_or_else(|| Failure::msg(Kind::Config, "no output path: pass --out or set models.classifier"))?;
    let loss_path = loss_csv.map_or_else(|| target.with_extension("loss.csv"), Path::to_path_buf);
    let engine = feature_engine(config)?;

    let mut labelled = Vec::new();
    for (dir, positive) in [(positives, true), (negatives, false)] {
        let files = wav_files(dir)?;
        if files.is_empty() {
            return Err(Failure::msg(Kind::Data, format!("no WAV files in {}", dir.display())));
        }
        labelled.extend(files.into_iter().map(|f| (f, positive)));
    }
    let windows = par_map(&labelled, |(path, positive)| -> CliResult<Vec<LabeledWindow>> {
        let clip = read_wav(path).or_fail_with(Kind::Data, || format!("reading {}", path.display()))?;
        let windows = engine.clip_windows(&clip.samples).or_fail(Kind::Data)?;
        if windows.is_empty() {
            warn!("{} is too short to yield a classifier window", path.display());
        }
        Ok(windows.iter().map(|w| LabeledWindow::from_embeddings(w, *positive)).collect())
    });
    let mut data = Vec::new();
    for w in windows {
        data.extend(w?);
    }
    if data.is_empty() {
        return Err(Failure::msg(Kind::Data, "no clip is long enough to yield a classifier window"));
    }

    let model = FcnModel::init(config.pipeline.ww_windows, config.hidden_units, config.train.seed);
    let outcome = train(model, &data, &config.train).map_err(|e| match e {
        TrainError::SingleClassData => Failure::msg(Kind::Training, "training data holds a single class"),
        other => Failure::new(Kind::Training, other),
    })?;
    outcome
        .model
        .save(&target)
        .or_fail_with(Kind::Data, || format!("writing {}", target.display()))?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in outcome.epoch_losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(&loss_path, csv).or_fail_with(Kind::Data, || format!("writing {}", loss_path.display()))?;
    writeln!(
        out,
        "trained on {} windows for {} epochs, final loss {:.6}; model {}, loss trace {}",
        data.len(),
        outcome.epoch_losses.len(),
        outcome.final_loss(),
        target.display(),
        loss_path.display()
    )
    .or_fail(Kind::Data)
}

pub fn eval_cmd(
    config: &AppConfig,
    manifest_path: &Path,
    task: Task,
    report: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<()> {
    let manifest = DatasetManifest::load(manifest_path)
        .or_fail_with(Kind::Data, || format!("loading manifest {}", manifest_path.display()))?;
    for polarity in [true, false] {
        let wanted: Vec<Category> = Category::ALL
            .into_iter()
            .filter(|c| c.polarity(task) == Some(polarity))
            .collect();
        if wanted.iter().all(|&c| manifest.count(c) == 0) {
            let labels: Vec<&str> = wanted.iter().map(|c| c.label()).collect();
            let side = if polarity { "positive" } else { "negative" };
            return Err(Failure::msg(
                Kind::Data,
                format!("manifest has no {side} clips for {task:?}: missing category {}", labels.join(" / ")),
            ));
        }
    }
    let engine = match task {
        Task::Wakeword => engine(config, scorer(config)?, None)?,
        Task::Auth => {
            let placeholder = Arc::new(ConstantScorer {
                probability: 0.0,
                ww_windows: config.pipeline.ww_windows,
            });
            engine(config, placeholder, profile(config, true)?)?
        }
    };
    let collected = collect_scores(&engine, &manifest, task, config.eval.wakeword_scoring).or_fail(Kind::Data)?;
    for s in &collected.skipped {
        warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    let points = sweep(&collected.scores).or_fail(Kind::Data)?;
    let result = eer(&collected.scores, config.eval.method).or_fail(Kind::Data)?;
    if let Some(path) = report {
        fs::write(path, format_report(&points, &result)).or_fail_with(Kind::Data, || format!("writing {}", path.display()))?;
    }
    let w = |r: io::Result<()>| r.or_fail(Kind::Data);
    w(writeln!(
        out,
        "scored {} positives, {} negatives ({} skipped)",
        collected.scores.positives.len(),
        collected.scores.negatives.len(),
        collected.skipped.len()
    ))?;
    w(writeln!(out, "Optimal Threshold: {:.4}", result.threshold))?;
    w(writeln!(out, "EER (%): {:.2}", result.eer * 100.0))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PrepSteps {
    pub normalize: bool,
    pub vad: bool,
    /// (segment, gap) in seconds.
    pub segment: Option<(f64, f64)>,
}

enum PrepOutcome {
    Written { seconds_in: f64, seconds_out: f64, outputs: usize },
    Skipped(&'static str),
}

fn prep_one(config: &AppConfig, path: &Path, out_dir: &Path, steps: PrepSteps) -> anyhow::Result<PrepOutcome> {
    let mut clip = read_wav(path)?;
    let seconds_in = clip.duration_secs();
    if steps.normalize {
        match rms_normalize(&clip, config.normalize_dbfs) {
            Ok(n) => {
                if n.clipped > 0 {
                    warn!("{}: {} samples clipped by normalization", path.display(), n.clipped);
                }
                clip = n.clip;
                quantize(&mut clip);
            }
            Err(wakegate::audio_io::AudioError::SilentInput(_)) => return Ok(PrepOutcome::Skipped("silent")),
            Err(e) => return Err(e.into()),
        }
    }
    if steps.vad {
        let trimmed = vad_trim(&clip, &config.vad);
        if !trimmed.speech_detected {
            return Ok(PrepOutcome::Skipped("no speech"));
        }
        clip = trimmed.clip;
    }
    let seconds_out = clip.duration_secs();
    let outputs = match steps.segment {
        None => {
            write_wav(&clip, out_dir.join(file_name(path)))?;
            1
        }
        Some((seg, gap)) => {
            let len = (seg * SAMPLE_RATE as f64).round() as usize;
            let stride = len + (gap * SAMPLE_RATE as f64).round() as usize;
            let mut k = 0;
            while k * stride + len <= clip.len() {
                let piece = PcmClip::new(clip.samples[k * stride..k * stride + len].to_vec());
                write_wav(&piece, out_dir.join(format!("{}_seg{k}.wav", stem(path))))?;
                k += 1;
            }
            k
        }
    };
    Ok(PrepOutcome::Written {
        seconds_in,
        seconds_out,
        outputs,
    })
}

pub fn prep_cmd(config: &AppConfig, in_dir: &Path, out_dir: &Path, steps: PrepSteps, out: &mut dyn Write) -> CliResult<()> {
    if let Some((seg, gap)) = steps.segment {
        if !(seg > 0.0 && gap >= 0.0 && seg.is_finite() && gap.is_finite()) {
            return Err(Failure::msg(Kind::Config, "--segment must be positive and --gap non-negative"));
        }
    }
    let files = wav_files(in_dir)?;
    if files.is_empty() {
        return Err(Failure::msg(Kind::Data, format!("no WAV files in {}", in_dir.display())));
    }
    fs::create_dir_all(out_dir).or_fail_with(Kind::Data, || format!("creating {}", out_dir.display()))?;
    let (mut written, mut skipped, mut failed, mut outputs) = (0, 0, 0, 0);
    let mut trimmed = 0.0;
    let w = |r: io::Result<()>| r.or_fail(Kind::Data);
    for path in &files {
        match prep_one(config, path, out_dir, steps) {
            Ok(PrepOutcome::Written {
                seconds_in,
                seconds_out,
                outputs: n,
            }) => {
                written += 1;
                outputs += n;
                trimmed += seconds_in - seconds_out;
                info!("{}: {seconds_in:.3} s -> {seconds_out:.3} s", path.display());
            }
            Ok(PrepOutcome::Skipped(why)) => {
                skipped += 1;
                w(writeln!(out, "{}: skipped, {why}", file_name(path)))?;
            }
            Err(e) => {
                failed += 1;
                log::error!("{}: {e:#}", path.display());
            }
        }
    }
    w(writeln!(
        out,
        "processed {written} files into {outputs} outputs; {skipped} silent or without speech; {failed} failed; {trimmed:.3} s trimmed"
    ))?;
    if failed == files.len() {
        return Err(Failure::msg(Kind::Data, "every input failed"));
    }
    Ok(())
}

pub fn augment_cmd(
    config: &AppConfig,
    in_dir: &Path,
    out_dir: &Path,
    multiplier: usize,
    noise_dir: Option<&Path>,
    rir_dir: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult<()> {
    if multiplier == 0 {
        return Err(Failure::msg(Kind::Config, "--multiplier must be at least 1"));
    }
    let settings = config.augment.clone();
    let bank = |dir: Option<&Path>, p: f64, what: &str| -> CliResult<Vec<PcmClip>> {
        match dir {
            Some(d) => {
                let clips = load_bank(d).or_fail_with(Kind::Data, || format!("loading {what} bank {}", d.display()))?;
                if clips.is_empty() && p > 0.0 {
                    return Err(Failure::msg(Kind::Data, format!("{what} bank {} holds no WAV files", d.display())));
                }
                Ok(clips)
            }
            None if p > 0.0 => Err(Failure::msg(Kind::Data, format!("p_{what} > 0 but no {what} bank was given"))),
            None => Ok(Vec::new()),
        }
    };
    let noise_bank = bank(noise_dir, settings.p_noise, "noise")?;
    let rir_bank = bank(rir_dir, settings.p_rir, "rir")?;
    let plan = AugmentPlan::new(settings, noise_bank, rir_bank).or_fail(Kind::Config)?;

    let files = wav_files(in_dir)?;
    if files.is_empty() {
        return Err(Failure::msg(Kind::Data, format!("no WAV files in {}", in_dir.display())));
    }
    fs::create_dir_all(out_dir).or_fail_with(Kind::Data, || format!("creating {}", out_dir.display()))?;
    let indexed: Vec<(usize, &PathBuf)> = files.iter().enumerate().collect();
    let results = par_map(&indexed, |&(i, path)| -> CliResult<Vec<String>> {
        let clip = read_wav(path).or_fail_with(Kind::Data, || format!("reading {}", path.display()))?;
        let mut lines = Vec::with_capacity(multiplier);
        for k in 0..multiplier {
            let index = (i * multiplier + k) as u64;
            let (augmented, record) = augment_clip(&clip, &plan, index).or_fail_with(Kind::Data, || path.display().to_string())?;
            let name = format!("{}_aug{k}.wav", stem(path));
            write_wav(&augmented, out_dir.join(&name)).or_fail(Kind::Data)?;
            let mut value = serde_json::to_value(&record).or_fail(Kind::Data)?;
            if let Some(map) = value.as_object_mut() {
                map.insert("source".into(), file_name(path).into());
                map.insert("output".into(), name.into());
            }
            lines.push(value.to_string());
        }
        Ok(lines)
    });
    let mut manifest = String::new();
    let mut count = 0;
    for lines in results {
        for line in lines? {
            manifest.push_str(&line);
            manifest.push('\n');
            count += 1;
        }
    }
    let manifest_path = out_dir.join("augment_manifest.jsonl");
    fs::write(&manifest_path, manifest).or_fail(Kind::Data)?;
    writeln!(out, "wrote {count} augmented clips and {}", manifest_path.display()).or_fail(Kind::Data)
}
