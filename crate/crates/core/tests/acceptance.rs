//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

mod common;

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use common::*;
use wakegate::audio_io::{encode_wav, parse_wav, read_wav, write_wav};
use wakegate::augment::{add_noise_snr, augment_clip, convolve_rir, AugmentPlan, AugmentSettings};
use wakegate::binfmt::round_to_f32;
use wakegate::dsp::{melspectrogram, DspError, MelExtractor};
use wakegate::evalkit::{
    collect_scores, eer, format_report, parse_report, sweep, DatasetManifest, EerMethod, ScoreSet, Task,
    WakewordScoring,
};
use wakegate::pipeline::{parse_event_log, run_stream, ClipSource, SampleSource};
use wakegate::speaker_auth::{clip_similarity, enroll, ApproachAFeatures};
use wakegate::wakeword::{train, ConstantScorer, LabeledWindow, Trainer, WakewordScorer};
use wakegate::{
    DetectionEvent, EmbedderSpec, Engine, FcnModel, GateAction, GateState, MelConfig, PcmClip, PipelineConfig,
    ReferenceProfile, SplitMix64, TrainConfig,
};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "published-number reproducibility statement", c1_methodology),
        (2, "DSP oracle equivalence", c2_dsp_oracle),
        (3, "frame arithmetic", c3_frame_arithmetic),
        (4, "gradient check and accumulation", c4_gradients),
        (5, "gate-trace equivalence", c5_gate_traces),
        (6, "EER oracle equivalence", c6_eer),
        (7, "pipeline determinism", c7_determinism),
        (8, "end-to-end desk-scale smoke", c8_end_to_end),
        (9, "augmentation calibration", c9_augmentation),
        (10, "round-trips", c10_round_trips),
    ];
    // ACCEPTANCE_ONLY=3,8 runs a subset
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id:>2} PASS  {name} ({secs:.1} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id:>2} FAIL  {name} ({secs:.1} s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let per = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|chunk| s.spawn(|| chunk.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

fn write_manifest(dir: &Path, rows: &[(String, &str)]) -> std::path::PathBuf {
    let path = dir.join("manifest.csv");
    let mut text = String::from("path,category\n");
    for (p, c) in rows {
        text.push_str(&format!("{p},{c}\n"));
    }
    std::fs::write(&path, text).unwrap();
    path
}

// 1. The published absolute EERs need a private dataset and pretrained
// models; what can be checked is that the evaluation method runs end to end.
fn c1_methodology() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = PipelineConfig::default();
    let e = engine(config, Arc::new(ConstantScorer { probability: 0.7, ww_windows: 16 }));
    let mut rows = Vec::new();
    for (i, category) in ["voice-authp", "voice-authn", "tts-wwp", "tts-wwn", "conversation"].iter().enumerate() {
        for k in 0..2 {
            let name = format!("{category}_{k}.wav");
            let center = if *category == "voice-authp" { 800.0 } else { 2500.0 };
            let clip = PcmClip::new(band_noise(10 * i as u64 + k, center, 48_000));
            write_wav(&clip, dir.path().join(&name)).map_err(|e| e.to_string())?;
            rows.push((name, *category));
        }
    }
    let manifest = DatasetManifest::load(write_manifest(dir.path(), &rows)).map_err(|e| e.to_string())?;
    for task in [Task::Wakeword, Task::Auth] {
        let collected = collect_scores(&e, &manifest, task, WakewordScoring::MaxProbability).map_err(|e| e.to_string())?;
        ensure!(collected.skipped.is_empty(), "skipped clips: {:?}", collected.skipped);
        let expected = if task == Task::Wakeword { (6, 4) } else { (2, 2) };
        let got = (collected.scores.positives.len(), collected.scores.negatives.len());
        ensure!(got == expected, "{task:?} score counts {got:?}, expected {expected:?}");
        let points = sweep(&collected.scores).map_err(|e| e.to_string())?;
        let result = eer(&collected.scores, EerMethod::SweepInterpolated).map_err(|e| e.to_string())?;
        let parsed = parse_report(format_report(&points, &result).as_bytes()).map_err(|e| e.to_string())?;
        ensure!(parsed.points.len() == 21, "report rows");
    }
    Ok("published EERs (16.79% wakeword, 6.60% auth) are not reproducible without the original dataset and \
        pretrained models; the method (collect, sweep, EER, report) ran on a WAV fixture"
        .into())
}

// 2. Naive DFT + independently built filterbank.
fn oracle_melspectrogram(x: &[f64]) -> Vec<Vec<f64>> {
    let (n_fft, win, hop, n_mels, f_min, f_max) = (512usize, 400usize, 160usize, 32usize, 60.0f64, 3800.0f64);
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| hz(mel(f_min) + (mel(f_max) - mel(f_min)) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bins = n_fft / 2 + 1;
    let weight = |m: usize, k: usize| {
        let f = k as f64 * 16000.0 / n_fft as f64;
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if f <= lo || f >= hi {
            0.0
        } else if f <= c {
            (f - lo) / (c - lo)
        } else {
            (hi - f) / (hi - c)
        }
    };
    let frames = (x.len() - win) / hop + 1;
    (0..frames)
        .map(|t| {
            let frame: Vec<f64> = (0..win)
                .map(|n| x[t * hop + n] * (0.5 - 0.5 * (2.0 * PI * n as f64 / win as f64).cos()))
                .collect();
            let power: Vec<f64> = (0..bins)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in frame.iter().enumerate() {
                        let a = -2.0 * PI * (k * n % n_fft) as f64 / n_fft as f64;
                        re += v * a.cos();
                        im += v * a.sin();
                    }
                    re * re + im * im
                })
                .collect();
            (0..n_mels)
                .map(|m| {
                    let e: f64 = (0..bins).map(|k| weight(m, k) * power[k]).sum();
                    (e + 1e-6).ln() / 10.0 + 2.0
                })
                .collect()
        })
        .collect()
}

fn c2_dsp_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = MelConfig::pipeline();
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let x = noise(seed, 1760, 1.0);
        let got = melspectrogram(&x, &cfg).map_err(|e| e.to_string())?;
        let want = oracle_melspectrogram(&x);
        ensure!(got.len() == want.len(), "frame count {} vs {}", got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            for (a, b) in g.values().iter().zip(w) {
                worst = worst.max((a - b).abs() / b.abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-6, "max relative error {worst:e}");
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!("50 clips, max relative error {worst:.2e}, {secs:.2} s"))
}

fn c3_frame_arithmetic() -> Outcome {
    let pipe = MelConfig::pipeline();
    ensure!(melspectrogram(&vec![0.1; 1760], &pipe).unwrap().len() == 9, "1760 samples must give 9 frames");
    let mut checked = 0;
    for n in pipe.win_len..=pipe.win_len + 10 * pipe.hop {
        let expected = (n - pipe.win_len) / pipe.hop + 1;
        let got = melspectrogram(&noise(n as u64, n, 0.5), &pipe).unwrap().len();
        ensure!(got == expected && pipe.frame_count(n) == expected, "pipeline N={n}: {got} vs {expected}");
        checked += 1;
    }
    let a = MelConfig::approach_a();
    let extractor = MelExtractor::new(a).unwrap();
    let mel_power_frames = |x: &[f64], _: &MelConfig| extractor.mel_power(x).map(|f| f.len());
    ensure!(mel_power_frames(&vec![0.1; 27_136], &a).unwrap() == 50, "27136 samples must give 50 frames");
    ensure!(ApproachAFeatures::new(50).required_samples() == 27_136, "A required samples");
    for n in a.win_len..=a.win_len + 10 * a.hop {
        let expected = (n - a.win_len) / a.hop + 1;
        let got = mel_power_frames(&noise(n as u64, n, 0.5), &a).unwrap();
        ensure!(got == expected && a.frame_count(n) == expected, "approach A N={n}: {got} vs {expected}");
        checked += 1;
    }
    ensure!(
        matches!(melspectrogram(&vec![0.0; 399], &pipe), Err(DspError::TooShort { .. })),
        "short input must be rejected"
    );
    Ok(format!("{checked} lengths checked across both presets"))
}

fn c4_gradients() -> Outcome {
    let mut rng = SplitMix64::new(4);
    let mut model = FcnModel::init_with_input(32, 8, 4, 1);
    model.b1.iter_mut().for_each(|b| *b = 0.2 * rng.next_signed());
    model.b2 = 0.1;
    let batch: Vec<LabeledWindow> = (0..16)
        .map(|i| LabeledWindow {
            input: (0..32).map(|_| rng.next_signed()).collect(),
            label: (i % 2) as f64,
        })
        .collect();
    let (_, grad) = model.loss_and_grad(&batch).map_err(|e| e.to_string())?;
    let analytic: Vec<f64> = grad.w1.iter().chain(&grad.b1).chain(&grad.w2).chain([&grad.b2]).copied().collect();
    let base = model.params();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut probe = model.clone();
        let mut p = base.clone();
        p[i] += h;
        probe.set_params(&p);
        let up = probe.mean_loss(&batch).unwrap();
        p[i] -= 2.0 * h;
        probe.set_params(&p);
        let down = probe.mean_loss(&batch).unwrap();
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    ensure!(worst <= 1e-4, "gradient relative error {worst:e}");

    // accumulation over k micro-batches vs a hand-written full-batch momentum step
    let (lr, mu) = (0.05, 0.9);
    let batches: Vec<Vec<LabeledWindow>> = (0..2)
        .map(|_| {
            (0..64)
                .map(|i| LabeledWindow {
                    input: (0..32).map(|_| rng.next_signed()).collect(),
                    label: (i % 3 == 0) as u8 as f64,
                })
                .collect()
        })
        .collect();
    let mut oracle = model.clone();
    let mut velocity = vec![0.0; base.len()];
    for b in &batches {
        let (_, g) = oracle.loss_and_grad(b).unwrap();
        let flat: Vec<f64> = g.w1.iter().chain(&g.b1).chain(&g.w2).chain([&g.b2]).copied().collect();
        let mut p = oracle.params();
        for ((p, v), g) in p.iter_mut().zip(&mut velocity).zip(flat) {
            *v = mu * *v + g;
            *p -= lr * *v;
        }
        oracle.set_params(&p);
    }
    let mut accum_worst = 0.0f64;
    for k in [1, 2, 4, 8] {
        let mut trainer = Trainer::new(model.clone(), lr, mu);
        for b in &batches {
            let micro: Vec<&[LabeledWindow]> = b.chunks(64 / k).collect();
            trainer.step(&micro).map_err(|e| e.to_string())?;
        }
        for (a, b) in trainer.model.params().iter().zip(oracle.params()) {
            accum_worst = accum_worst.max((a - b).abs());
        }
    }
    ensure!(accum_worst <= 1e-10, "accumulated step differs by {accum_worst:e}");
    Ok(format!("max gradient rel error {worst:.2e}; accumulation max diff {accum_worst:.1e} for k in 1,2,4,8"))
}

/// Direct transliteration of the gate pseudocode.
fn oracle_gate(ps: &[f64], threshold: f64, level: u32, cooldown_frames: u32) -> Vec<GateAction> {
    let (mut activations, mut cooldown) = (0u32, 0u32);
    let mut out = Vec::new();
    for &p in ps {
        if cooldown > 0 {
            cooldown -= 1;
            out.push(GateAction::CooldownSkip);
            continue;
        }
        if p >= threshold {
            activations += 1;
            if activations >= level {
                activations = 0;
                cooldown = cooldown_frames;
                out.push(GateAction::Triggered);
                continue;
            }
        } else {
            activations = if activations > 0 { activations - 1 } else { 0 };
        }
        out.push(GateAction::Idle);
    }
    out
}

fn c5_gate_traces() -> Outcome {
    let mut triggers = 0;
    for seed in 0..1000u64 {
        let mut rng = SplitMix64::new(seed);
        let level = 1 + (seed % 5) as u32;
        let threshold = [0.5, 0.3, 0.7, 0.9][rng.below(4)];
        let bias = rng.uniform(-0.3, 0.3);
        let ps: Vec<f64> = (0..200)
            .map(|_| match rng.below(10) {
                0 => threshold, // exact ties
                _ => (rng.next_f64() + bias).clamp(0.0, 1.0),
            })
            .collect();
        let mut gate = GateState::new(threshold, level, 20);
        let got: Vec<GateAction> = ps.iter().map(|&p| gate.update(p)).collect();
        let want = oracle_gate(&ps, threshold, level, 20);
        ensure!(got == want, "trace mismatch for seed {seed}");
        triggers += got.iter().filter(|a| **a == GateAction::Triggered).count();
    }
    ensure!(triggers > 1000, "sequences too quiet to be meaningful ({triggers} triggers)");
    Ok(format!("1000 traces identical ({triggers} triggers)"))
}

fn c6_eer() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = SplitMix64::new(seed);
        let np = 100 + rng.below(301);
        let nn = 100 + rng.below(301);
        let (mu_p, mu_n) = (rng.uniform(0.45, 0.9), rng.uniform(0.1, 0.55));
        let (sd_p, sd_n) = (rng.uniform(0.08, 0.25), rng.uniform(0.08, 0.25));
        let mut draw = |n: usize, mu: f64, sd: f64| -> Vec<f64> {
            (0..n).map(|_| (mu + sd * rng.gaussian()).clamp(0.0, 1.0)).collect()
        };
        let positives = draw(np, mu_p, sd_p);
        let negatives = draw(nn, mu_n, sd_n);
        let set = ScoreSet::new(positives.clone(), negatives.clone(), Task::Wakeword);
        let exact = eer(&set, EerMethod::Exact).unwrap().eer;
        let swept = eer(&set, EerMethod::SweepInterpolated).unwrap().eer;
        worst = worst.max((exact - swept).abs());
        ensure!((exact - swept).abs() <= 0.025, "seed {seed}: exact {exact:.4} vs sweep {swept:.4}");

        let separated = ScoreSet::new(
            positives.iter().map(|s| 0.6 + 0.4 * s).collect(),
            negatives.iter().map(|s| 0.4 * s).collect(),
            Task::Auth,
        );
        for m in [EerMethod::Exact, EerMethod::SweepInterpolated] {
            let v = eer(&separated, m).unwrap().eer;
            ensure!(v == 0.0, "seed {seed}: separated {m:?} gives {v}");
        }
        let same = ScoreSet::new(positives.clone(), positives, Task::Wakeword);
        for m in [EerMethod::Exact, EerMethod::SweepInterpolated] {
            let v = eer(&same, m).unwrap().eer;
            ensure!((v - 0.5).abs() <= 0.025, "seed {seed}: identical {m:?} gives {v}");
        }
    }
    Ok(format!("100 sets, max |sweep - exact| = {worst:.4}"))
}

fn event_lines(events: &[&DetectionEvent]) -> Vec<u8> {
    events.iter().flat_map(|e| (e.to_json_line() + "\n").into_bytes()).collect()
}

fn c7_determinism() -> Outcome {
    let config = PipelineConfig::default();
    let mut total = 0;
    for trial in 0..20u64 {
        let clients: Vec<(String, Vec<f64>)> = (0..3)
            .map(|k| (format!("client-{k}"), synthetic_stream(1000 * trial + k, 60.0)))
            .collect();
        let e = calibrated_engine(config, trial, &clients[0].1[..320_000]);
        let sources = clients
            .iter()
            .map(|(id, a)| (id.clone(), Box::new(ClipSource::new(a.clone())) as Box<dyn SampleSource>))
            .collect();
        let mut threaded = Vec::new();
        run_stream(&e, sources, &mut threaded).map_err(|e| e.to_string())?;

        let mut stepper = calibrated_engine(config, trial, &clients[0].1[..320_000]);
        let block = 500 + 97 * trial as usize;
        for (id, audio) in &clients {
            stepper.register_client(id);
            let stepped: Vec<DetectionEvent> =
                audio.chunks(block).flat_map(|c| stepper.step(id, c).unwrap()).collect();
            let mine: Vec<&DetectionEvent> = threaded.iter().filter(|e| &e.client_id == id).collect();
            let a = event_lines(&mine);
            let b = event_lines(&stepped.iter().collect::<Vec<_>>());
            ensure!(a == b, "trial {trial} {id}: {} threaded vs {} step events differ", mine.len(), stepped.len());
            total += stepped.len();
        }
    }
    ensure!(total > 0, "no events at all: comparison is vacuous");
    Ok(format!("20 trials x 3 clients x 60 s, {total} events, logs byte-identical"))
}

fn positive_clip(seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut clip = noise(rng.next_u64(), 48_000, 0.005);
    let len = 8000 + rng.below(6000);
    let offset = 26_000 + rng.below(42_000 - 26_000 - len);
    let c = chirp(rng.uniform(300.0, 600.0), rng.uniform(2500.0, 3500.0), len, rng.uniform(0.3, 0.6));
    for (o, v) in clip[offset..offset + len].iter_mut().zip(c) {
        *o += v;
    }
    clip
}

fn negative_clip(seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    match rng.below(3) {
        0 => noise(rng.next_u64(), 48_000, rng.uniform(0.02, 0.3)),
        1 => band_noise(rng.next_u64(), rng.uniform(300.0, 3500.0), 48_000),
        _ => {
            // amplitude-modulated noise bursts
            let base = noise(rng.next_u64(), 48_000, rng.uniform(0.05, 0.3));
            let rate = rng.uniform(1.0, 5.0);
            base.iter()
                .enumerate()
                .map(|(i, v)| v * (0.5 + 0.5 * (2.0 * PI * rate * i as f64 / SR).sin()))
                .collect()
        }
    }
}

fn synthetic_rir(seed: u64, len: usize) -> PcmClip {
    let mut rng = SplitMix64::new(seed);
    let decay = rng.uniform(400.0, 1500.0);
    let mut h: Vec<f64> = (0..len).map(|i| rng.next_signed() * (-(i as f64) / decay).exp()).collect();
    h[0] = 1.0;
    PcmClip::new(h)
}

fn c8_end_to_end() -> Outcome {
    let start = Instant::now();
    let config = PipelineConfig::default();
    let backbone = Arc::new(EmbedderSpec::native(42, config.emb_features));
    let placeholder = Arc::new(ConstantScorer { probability: 0.5, ww_windows: config.ww_windows });
    let features = Engine::new(config, backbone.clone(), placeholder, encoder(), None).map_err(|e| e.to_string())?;

    let plan = AugmentPlan::new(
        AugmentSettings { seed: 42, ..Default::default() },
        vec![
            PcmClip::new(noise(900, 16_000, 0.3)),
            PcmClip::new(band_noise(901, 1500.0, 16_000)),
            PcmClip::new(band_noise(902, 400.0, 16_000)),
        ],
        (0..3).map(|i| synthetic_rir(950 + i, 4000)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let augmented = |raw: Vec<f64>, index: u64| augment_clip(&PcmClip::new(raw), &plan, index).unwrap().0.samples;

    // (seed, positive, augmentation index)
    let train_specs: Vec<(u64, bool, u64)> = (0..200u64)
        .flat_map(|i| [(10_000 + i, true, i), (20_000 + i, false, 1000 + i)])
        .collect();
    let train_windows: Vec<Vec<LabeledWindow>> = par_map(&train_specs, |&(seed, positive, index)| {
        let raw = if positive { positive_clip(seed) } else { negative_clip(seed) };
        features
            .clip_windows(&augmented(raw, index))
            .unwrap()
            .iter()
            .map(|w| LabeledWindow::from_embeddings(w, positive))
            .collect()
    });
    let data: Vec<LabeledWindow> = train_windows.into_iter().flatten().collect();
    // raw embeddings are not centred, so momentum needs a small step
    let train_config = TrainConfig {
        learning_rate: 0.002,
        micro_batch: 16,
        accum_steps: 2,
        epochs: 100,
        seed: 42,
        momentum: 0.9,
    };
    let outcome = train(FcnModel::init(config.ww_windows, 32, 42), &data, &train_config).map_err(|e| e.to_string())?;
    let final_loss = outcome.final_loss();
    let model: Arc<dyn WakewordScorer> = Arc::new(outcome.model);

    // held-out clips go through WAV files and the manifest scorer
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for i in 0..100u64 {
        let positive = i % 2 == 0;
        let raw = if positive { positive_clip(30_000 + i) } else { negative_clip(40_000 + i) };
        let name = format!("heldout_{i}.wav");
        write_wav(&PcmClip::new(augmented(raw, 5000 + i)), dir.path().join(&name)).map_err(|e| e.to_string())?;
        rows.push((name, if positive { "tts-wwp" } else { "tts-wwn" }));
    }
    let manifest = DatasetManifest::load(write_manifest(dir.path(), &rows)).map_err(|e| e.to_string())?;
    let detector = Engine::new(config, backbone, model, encoder(), None).map_err(|e| e.to_string())?;
    let collected = collect_scores(&detector, &manifest, Task::Wakeword, WakewordScoring::MaxProbability)
        .map_err(|e| e.to_string())?;
    ensure!(collected.skipped.is_empty(), "skipped held-out clips");
    let held_out = eer(&collected.scores, EerMethod::Exact).map_err(|e| e.to_string())?.eer;
    ensure!(held_out <= 0.10, "held-out exact EER {held_out:.4} > 0.10");

    let enrolled = band_noise(100, 800.0, 30_000);
    let profile = enroll(std::slice::from_ref(&enrolled), &encoder(), &config.auth).map_err(|e| e.to_string())?;
    let features_a = ApproachAFeatures::new(config.auth.a_num_frames);
    let sim = |audio: &[f64]| clip_similarity(&profile, audio, &encoder(), &features_a, &config.auth).unwrap();
    let own = sim(&enrolled);
    let other = sim(&band_noise(200, 3000.0, 30_000));
    ensure!((own - 1.0).abs() <= 1e-9, "self-similarity {own}");
    ensure!(other < own, "cross similarity {other} not below self {own}");

    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 300.0, "took {secs:.0} s");
    Ok(format!(
        "{} training windows, final loss {:.4}, held-out EER {held_out:.4}, self-sim {own:.12}, cross-sim {other:.4}, {secs:.1} s",
        data.len(),
        final_loss
    ))
}

fn c9_augmentation() -> Outcome {
    let signal = PcmClip::new(chirp(300.0, 3000.0, 16_000, 0.1));
    let mut worst = 0.0f64;
    for (k, snr) in [0.0, 10.0, 20.0, 30.0].into_iter().enumerate() {
        for seed in 0..5u64 {
            let n = PcmClip::new(noise(100 * k as u64 + seed, 5000, 0.2));
            let out = add_noise_snr(&signal, &n, snr).map_err(|e| e.to_string())?;
            ensure!(out.clipped == 0, "unexpected clipping");
            let residual: Vec<f64> = out.clip.samples.iter().zip(&signal.samples).map(|(o, s)| o - s).collect();
            let measured = 20.0 * (signal.rms() / PcmClip::new(residual).rms()).log10();
            worst = worst.max((measured - snr).abs());
        }
    }
    ensure!(worst <= 0.5, "SNR off by {worst:.3} dB");

    let x = PcmClip::new(noise(7, 3000, 0.4));
    let mut conv_worst = 0.0f64;
    for len in [1, 17, 300, 2500] {
        let h = synthetic_rir(len as u64, len);
        let got = convolve_rir(&x, &h).map_err(|e| e.to_string())?;
        let mut want = vec![0.0; x.len()];
        for i in 0..x.len() {
            for j in 0..h.len().min(i + 1) {
                want[i] += x.samples[i - j] * h.samples[j];
            }
        }
        let peak = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in got.samples.iter().zip(&want) {
            conv_worst = conv_worst.max((a - b * x.peak() / peak).abs());
        }
    }
    ensure!(conv_worst <= 1e-6, "convolution differs by {conv_worst:e}");

    let plan = AugmentPlan::new(
        AugmentSettings { seed: 9, p_band_stop: 0.5, p_distortion: 0.5, ..Default::default() },
        vec![PcmClip::new(noise(1, 4000, 0.3))],
        vec![synthetic_rir(2, 800)],
    )
    .map_err(|e| e.to_string())?;
    let clip = PcmClip::new(positive_clip(5));
    for index in 0..50 {
        let (a, ra) = augment_clip(&clip, &plan, index).unwrap();
        let (b, rb) = augment_clip(&clip, &plan, index).unwrap();
        ensure!(encode_wav(&a) == encode_wav(&b) && ra.to_json_line() == rb.to_json_line(), "index {index}");
        let bits = |c: &PcmClip| c.samples.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure!(bits(&a) == bits(&b), "index {index} not bit-identical");
    }
    Ok(format!("max SNR error {worst:.2e} dB, max convolution error {conv_worst:.1e}, 50 chains bit-identical"))
}

fn c10_round_trips() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let samples: Vec<f64> = noise(3, 20_000, 1.0);
    let wav_path = dir.path().join("x.wav");
    write_wav(&PcmClip::new(samples.clone()), &wav_path).map_err(|e| e.to_string())?;
    let back = read_wav(&wav_path).map_err(|e| e.to_string())?;
    let lsb = 1.0 / 32768.0;
    ensure!(back.len() == samples.len(), "wav length");
    ensure!(back.samples.iter().zip(&samples).all(|(a, b)| (a - b).abs() <= lsb), "wav beyond 1 LSB");
    ensure!(parse_wav(&encode_wav(&back)).unwrap() == back, "wav re-encode");

    let model = FcnModel::init(16, 32, 8);
    let p = dir.path().join("m.wgfc");
    model.save(&p).map_err(|e| e.to_string())?;
    let loaded = FcnModel::load(&p).map_err(|e| e.to_string())?;
    let mut rounded = model.params();
    round_to_f32(&mut rounded);
    ensure!(loaded.params() == rounded && loaded.to_bytes() == std::fs::read(&p).unwrap(), "WGFC");

    let spec = EmbedderSpec::native(42, 76);
    let p = dir.path().join("e.wgem");
    spec.save(&p).map_err(|e| e.to_string())?;
    let loaded = EmbedderSpec::load(&p).map_err(|e| e.to_string())?;
    let mut rounded = spec.weights.clone();
    round_to_f32(&mut rounded);
    ensure!(loaded.weights == rounded && loaded.to_bytes() == std::fs::read(&p).unwrap(), "WGEM");

    let config = PipelineConfig::default();
    let profile = common::profile(&config);
    let p = dir.path().join("p.wgsp");
    profile.save(&p).map_err(|e| e.to_string())?;
    let loaded = ReferenceProfile::load(&p).map_err(|e| e.to_string())?;
    let mut rounded = profile.ref_b.clone();
    round_to_f32(&mut rounded);
    ensure!(loaded.ref_b == rounded && loaded.to_bytes() == std::fs::read(&p).unwrap(), "WGSP");

    let mut e = engine(config, Arc::new(ConstantScorer { probability: 0.99, ww_windows: 16 }));
    e.register_client("c");
    let events = e.step("c", &synthetic_stream(5, 20.0)).map_err(|e| e.to_string())?;
    ensure!(!events.is_empty(), "no events to round-trip");
    let log = event_lines(&events.iter().collect::<Vec<_>>());
    ensure!(parse_event_log(log.as_slice()).unwrap() == events, "event log parse-back");

    let set = ScoreSet::new(noise(1, 150, 0.5).iter().map(|v| 0.5 + v).collect(), noise(2, 150, 0.5).iter().map(|v| 0.5 + v * 0.8).collect(), Task::Auth);
    let points = sweep(&set).unwrap();
    let result = eer(&set, EerMethod::SweepInterpolated).unwrap();
    let parsed = parse_report(format_report(&points, &result).as_bytes()).map_err(|e| e.to_string())?;
    let r6 = |v: f64| format!("{v:.6}");
    ensure!(
        parsed.points.iter().zip(&points).all(|(a, b)| r6(a.threshold) == r6(b.threshold) && r6(a.frr) == r6(b.frr) && r6(a.far) == r6(b.far))
            && r6(parsed.eer) == r6(result.eer),
        "report parse-back"
    );
    Ok(format!("WAV within 1 LSB; WGFC/WGEM/WGSP byte-stable; {} events and report re-parsed", events.len()))
}
