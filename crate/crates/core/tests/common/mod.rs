#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use wakegate::pipeline::{Engine, PipelineConfig};
use wakegate::speaker_auth::enroll;
use wakegate::wakeword::WakewordScorer;
use wakegate::{EmbedderSpec, FcnModel, SplitMix64, VoiceEncoderSpec};

pub const SR: f64 = 16000.0;

pub fn noise(seed: u64, n: usize, amp: f64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| amp * rng.next_signed()).collect()
}

/// Sum of random partials within ±150 Hz of `center`.
pub fn band_noise(seed: u64, center: f64, n: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let partials: Vec<(f64, f64)> = (0..24)
        .map(|_| (center + rng.uniform(-150.0, 150.0), rng.uniform(0.0, 2.0 * PI)))
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / SR;
            partials.iter().map(|(f, ph)| (2.0 * PI * f * t + ph).sin()).sum::<f64>() * 0.03
        })
        .collect()
}

/// Linear chirp from `f0` to `f1` Hz over `n` samples.
pub fn chirp(f0: f64, f1: f64, n: usize, amp: f64) -> Vec<f64> {
    let dur = n as f64 / SR;
    (0..n)
        .map(|i| {
            let t = i as f64 / SR;
            amp * (2.0 * PI * (f0 * t + (f1 - f0) * t * t / (2.0 * dur))).sin()
        })
        .collect()
}

/// Random mix of quiet noise, chirps and band noise, `seconds` long.
pub fn synthetic_stream(seed: u64, seconds: f64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    let total = (seconds * SR) as usize;
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let len = 4000 + rng.below(20_000);
        let segment = match rng.below(3) {
            0 => noise(rng.next_u64(), len, 0.01),
            1 => chirp(rng.uniform(200.0, 800.0), rng.uniform(1500.0, 4000.0), len, 0.5),
            _ => band_noise(rng.next_u64(), rng.uniform(300.0, 3000.0), len),
        };
        out.extend(segment);
    }
    out.truncate(total);
    out
}

pub fn encoder() -> VoiceEncoderSpec {
    VoiceEncoderSpec::native(7)
}

pub fn profile(config: &PipelineConfig) -> wakegate::ReferenceProfile {
    let clips = vec![band_noise(100, 800.0, 30_000), band_noise(101, 800.0, 30_000)];
    enroll(&clips, &encoder(), &config.auth).unwrap()
}

pub fn engine(config: PipelineConfig, scorer: Arc<dyn WakewordScorer>) -> Engine {
    Engine::new(
        config,
        Arc::new(EmbedderSpec::native(42, config.emb_features)),
        scorer,
        encoder(),
        Some(profile(&config)),
    )
    .unwrap()
}

/// An untrained classifier with the wake threshold placed at the median of
/// its raw scores on `calibration`, so the gate fires now and then.
pub fn calibrated_engine(mut config: PipelineConfig, seed: u64, calibration: &[f64]) -> Engine {
    let model: Arc<dyn WakewordScorer> = Arc::new(FcnModel::init(config.ww_windows, 32, seed));
    let probe = engine(config, model.clone());
    let mut p: Vec<f64> = probe
        .score_clip(calibration)
        .unwrap()
        .iter()
        .map(|c| c.probability)
        .collect();
    p.sort_by(f64::total_cmp);
    config.wake_threshold = p[p.len() / 2];
    engine(config, model)
}
