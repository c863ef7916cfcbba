//! JSON configuration with dotted-key overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wakegate::augment::AugmentSettings;
use wakegate::evalkit::WakewordScoring;
use wakegate::{EerMethod, MelConfig, PipelineConfig, TrainConfig, VadParams};

use crate::failure::{CliResult, Failure, Kind, OrFail};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelPaths {
    /// WGEM backbone weights; the seeded stand-in is used when absent.
    pub backbone: Option<PathBuf>,
    /// WGFC classifier.
    pub classifier: Option<PathBuf>,
    /// WGSP speaker profile.
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub method: EerMethod,
    pub wakeword_scoring: WakewordScoring,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            method: EerMethod::SweepInterpolated,
            wakeword_scoring: WakewordScoring::MaxProbability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub pipeline: PipelineConfig,
    pub mel: MelConfig,
    pub train: TrainConfig,
    pub hidden_units: usize,
    pub augment: AugmentSettings,
    pub vad: VadParams,
    pub normalize_dbfs: f64,
    pub eval: EvalSettings,
    pub models: ModelPaths,
    pub backbone_seed: u64,
    pub encoder_seed: u64,
    /// Replaces the classifier with a fixed probability (fixtures and demos).
    pub constant_score: Option<f64>,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            mel: MelConfig::pipeline(),
            train: TrainConfig::default(),
            hidden_units: 32,
            augment: AugmentSettings::default(),
            vad: VadParams::default(),
            normalize_dbfs: -20.0,
            eval: EvalSettings::default(),
            models: ModelPaths::default(),
            backbone_seed: 42,
            encoder_seed: 7,
            constant_score: None,
        }
    }
}

impl AppConfig {
    /// Reads `path` (or the defaults), applies `key=value` overrides, then
    /// validates. Relative model paths resolve against the config file.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut tree = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).or_fail_with(Kind::Config, || format!("reading {}", p.display()))?;
                serde_json::from_str(&text).or_fail_with(Kind::Config, || format!("parsing {}", p.display()))?
            }
            None => Value::Object(Default::default()),
        };
        for item in overrides {
            apply_override(&mut tree, item)?;
        }
        let mut config: AppConfig = serde_json::from_value(tree).or_fail(Kind::Config)?;
        if let Some(base) = path.and_then(Path::parent) {
            for slot in [
                &mut config.models.backbone,
                &mut config.models.classifier,
                &mut config.models.profile,
            ] {
                if let Some(p) = slot.as_mut().filter(|p| p.is_relative()) {
                    *p = base.join(&*p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(Failure::msg(Kind::Config, m));
        self.pipeline.validate().or_fail(Kind::Config)?;
        self.train.validate().or_fail(Kind::Config)?;
        if self.mel != MelConfig::pipeline() {
            return bad("mel settings are fixed by the backbone input contract (32 bins, 400/160, FFT 512, 60-3800 Hz)".into());
        }
        if self.hidden_units == 0 {
            return bad("hidden_units must be positive".into());
        }
        if !(self.normalize_dbfs.is_finite() && self.normalize_dbfs <= 0.0) {
            return bad("normalize_dbfs must be a finite level at or below 0 dBFS".into());
        }
        let v = &self.vad;
        if v.frame_len == 0 || v.hop == 0 || v.min_speech_frames == 0 {
            return bad("vad frame_len, hop and min_speech_frames must be positive".into());
        }
        if let Some(p) = self.constant_score {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("constant_score {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// `a.b.c=<json>`; a value that is not valid JSON is taken as a string.
fn apply_override(tree: &mut Value, item: &str) -> CliResult<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::msg(Kind::Config, format!("override {item:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| Failure::msg(Kind::Config, format!("override {key:?}: {part:?} is not inside an object")))?;
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Failure::msg(Kind::Config, format!("empty override key in {item:?}")))
}
