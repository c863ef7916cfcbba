//! Wakeword classifier and the activation gate in front of authentication.
//!
//! The classifier is a one-hidden-layer ReLU network over a flattened run of
//! `ww_windows` backbone embeddings with a sigmoid output. Training is plain
//! momentum SGD with gradient accumulation: gradients of several micro-batches
//! are summed and divided by the item count before a single update, which is
//! exactly one large-batch step.

use std::path::Path;

use crate::backbone::{Embedding96, ModelError, EMBEDDING_DIM};
use crate::binfmt::{FormatError, Reader, Writer};
use crate::rng::SplitMix64;

const WGFC_MAGIC: &[u8; 4] = b"WGFC";
const PROB_CLAMP: f64 = 1e-7;

pub trait WakewordScorer: Send + Sync {
    /// Embeddings consumed per classification.
    fn ww_windows(&self) -> usize;

    fn score(&self, window: &[Embedding96]) -> Result<f64, ModelError>;
}

/// Returns the same probability for every window. Useful to exercise the
/// gate and authentication path without a trained model.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer {
    pub probability: f64,
    pub ww_windows: usize,
}

impl WakewordScorer for ConstantScorer {
    fn ww_windows(&self) -> usize {
        self.ww_windows
    }

    fn score(&self, window: &[Embedding96]) -> Result<f64, ModelError> {
        if window.len() != self.ww_windows {
            return Err(ModelError::shape(self.ww_windows, window.len()));
        }
        Ok(self.probability)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("training data contains a single class")]
    SingleClassData,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcnModel {
    pub ww_windows: usize,
    pub hidden: usize,
    /// `hidden` rows of `input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl Gradients {
    fn zeros_like(model: &FcnModel) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: 0.0,
        }
    }

    fn scale(&mut self, s: f64) {
        self.w1.iter_mut().for_each(|v| *v *= s);
        self.b1.iter_mut().for_each(|v| *v *= s);
        self.w2.iter_mut().for_each(|v| *v *= s);
        self.b2 *= s;
    }
}

/// One training example: a flattened embedding run and a 0/1 label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub input: Vec<f64>,
    pub label: f64,
}

impl LabeledWindow {
    pub fn from_embeddings(window: &[Embedding96], positive: bool) -> Self {
        Self {
            input: window.iter().flat_map(|e| e.values().iter().copied()).collect(),
            label: if positive { 1.0 } else { 0.0 },
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

impl FcnModel {
    pub fn zeros(ww_windows: usize, hidden: usize) -> Self {
        let d = ww_windows * EMBEDDING_DIM;
        Self::zeros_with_input(d, hidden, ww_windows)
    }

    fn zeros_with_input(input_dim: usize, hidden: usize, ww_windows: usize) -> Self {
        Self {
            ww_windows,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Glorot-uniform weights from SplitMix64(`seed`), zero biases.
    pub fn init(ww_windows: usize, hidden: usize, seed: u64) -> Self {
        Self::init_with_input(ww_windows * EMBEDDING_DIM, hidden, seed, ww_windows)
    }

    /// Model over an arbitrary input width (for small synthetic problems).
    pub fn init_with_input(input_dim: usize, hidden: usize, seed: u64, ww_windows: usize) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut model = Self::zeros_with_input(input_dim, hidden, ww_windows);
        let a1 = (6.0 / (input_dim + hidden) as f64).sqrt();
        model.w1.iter_mut().for_each(|w| *w = a1 * rng.next_signed());
        let a2 = (6.0 / (hidden + 1) as f64).sqrt();
        model.w2.iter_mut().for_each(|w| *w = a2 * rng.next_signed());
        model
    }

    pub fn input_dim(&self) -> usize {
        self.w1.len() / self.hidden.max(1)
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        self.w1
            .chunks_exact(x.len())
            .zip(&self.b1)
            .map(|(row, b)| (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).max(0.0))
            .collect()
    }

    /// Probability for a flattened input vector.
    pub fn forward_flat(&self, x: &[f64]) -> Result<f64, ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::shape(self.input_dim(), x.len()));
        }
        let h = self.hidden_activations(x);
        let z: f64 = h.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2;
        Ok(sigmoid(z))
    }

    pub fn forward(&self, window: &[Embedding96]) -> Result<f64, ModelError> {
        if window.len() != self.ww_windows {
            return Err(ModelError::shape(
                format!("{} x {EMBEDDING_DIM}", self.ww_windows),
                format!("{} x {EMBEDDING_DIM}", window.len()),
            ));
        }
        let x: Vec<f64> = window.iter().flat_map(|e| e.values().iter().copied()).collect();
        self.forward_flat(&x)
    }

    /// Adds one item's BCE gradient into `grad` and returns its loss.
    fn accumulate(&self, item: &LabeledWindow, grad: &mut Gradients) -> Result<f64, ModelError> {
        let x = &item.input;
        if x.len() != self.input_dim() {
            return Err(ModelError::shape(self.input_dim(), x.len()));
        }
        let h = self.hidden_activations(x);
        let z: f64 = h.iter().zip(&self.w2).map(|(a, w)| a * w).sum::<f64>() + self.b2;
        let p = sigmoid(z);
        // d(BCE)/dz for a sigmoid output
        let dz = p - item.label;
        grad.b2 += dz;
        for (j, &hj) in h.iter().enumerate() {
            grad.w2[j] += dz * hj;
            if hj > 0.0 {
                let dh = dz * self.w2[j];
                grad.b1[j] += dh;
                let row = &mut grad.w1[j * x.len()..(j + 1) * x.len()];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += dh * v;
                }
            }
        }
        Ok(bce(p, item.label))
    }

    /// Mean BCE over the batch and its analytic gradient.
    pub fn loss_and_grad(&self, batch: &[LabeledWindow]) -> Result<(f64, Gradients), TrainError> {
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let mut grad = Gradients::zeros_like(self);
        let mut loss = 0.0;
        for item in batch {
            loss += self.accumulate(item, &mut grad)?;
        }
        let n = batch.len() as f64;
        grad.scale(1.0 / n);
        Ok((loss / n, grad))
    }

    pub fn mean_loss(&self, data: &[LabeledWindow]) -> Result<f64, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let mut total = 0.0;
        for item in data {
            total += bce(self.forward_flat(&item.input)?, item.label);
        }
        Ok(total / data.len() as f64)
    }

    /// Flat view of every parameter, in file order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w1.len() + 2 * self.hidden + 1);
        out.extend(&self.w1);
        out.extend(&self.b1);
        out.extend(&self.w2);
        out.push(self.b2);
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let (w1, rest) = params.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, rest) = rest.split_at(self.hidden);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = rest[0];
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(WGFC_MAGIC);
        w.u32(self.ww_windows as u32);
        w.u32(self.hidden as u32);
        w.f32s(&self.params());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader::new(bytes, WGFC_MAGIC)?;
        let ww_windows = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        if ww_windows == 0 || hidden == 0 {
            return Err(FormatError::Invalid("zero-sized classifier".into()).into());
        }
        let mut model = Self::zeros(ww_windows, hidden);
        let params = r.f32s(model.params().len())?;
        r.finish()?;
        model.set_params(&params);
        Ok(model)
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

impl WakewordScorer for FcnModel {
    fn ww_windows(&self) -> usize {
        self.ww_windows
    }

    fn score(&self, window: &[Embedding96]) -> Result<f64, ModelError> {
        self.forward(window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub micro_batch: usize,
    pub accum_steps: usize,
    pub epochs: usize,
    pub seed: u64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            micro_batch: 32,
            accum_steps: 4,
            epochs: 200,
            seed: 0,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.micro_batch == 0 || self.accum_steps == 0 || self.epochs == 0 {
            return Err(TrainError::InvalidConfig("counts must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Momentum SGD state for one model.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: FcnModel,
    velocity: Vec<f64>,
    learning_rate: f64,
    momentum: f64,
}

impl Trainer {
    pub fn new(model: FcnModel, learning_rate: f64, momentum: f64) -> Self {
        let velocity = vec![0.0; model.params().len()];
        Self {
            model,
            velocity,
            learning_rate,
            momentum,
        }
    }

    /// One optimizer update from the summed gradient of all micro-batches,
    /// divided by the total item count. Returns the mean loss of the items.
    pub fn step(&mut self, micro_batches: &[&[LabeledWindow]]) -> Result<f64, TrainError> {
        let count: usize = micro_batches.iter().map(|b| b.len()).sum();
        if count == 0 {
            return Err(TrainError::EmptyBatch);
        }
        let mut grad = Gradients::zeros_like(&self.model);
        let mut loss = 0.0;
        for batch in micro_batches {
            for item in batch.iter() {
                loss += self.model.accumulate(item, &mut grad)?;
            }
        }
        let inv = 1.0 / count as f64;
        let mut params = self.model.params();
        let flat_grad = grad.w1.iter().chain(&grad.b1).chain(&grad.w2).chain(std::iter::once(&grad.b2));
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(flat_grad) {
            *v = self.momentum * *v + g * inv;
            *p -= self.learning_rate * *v;
        }
        self.model.set_params(&params);
        Ok(loss * inv)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FcnModel,
    /// Full-dataset BCE after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn train(
    model: FcnModel,
    data: &[LabeledWindow],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let positives = data.iter().filter(|d| d.label >= 0.5).count();
    if positives == 0 || positives == data.len() {
        return Err(TrainError::SingleClassData);
    }

    let mut rng = SplitMix64::new(config.seed);
    let mut trainer = Trainer::new(model, config.learning_rate, config.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let step_items = config.micro_batch * config.accum_steps;
    let mut batch: Vec<LabeledWindow> = Vec::with_capacity(step_items);

    for _ in 0..config.epochs {
        rng.shuffle(&mut order);
        for step in order.chunks(step_items) {
            batch.clear();
            batch.extend(step.iter().map(|&i| data[i].clone()));
            let micro: Vec<&[LabeledWindow]> = batch.chunks(config.micro_batch).collect();
            trainer.step(&micro)?;
        }
        epoch_losses.push(trainer.model.mean_loss(data)?);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        epoch_losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateAction {
    Idle,
    CooldownSkip,
    Triggered,
}

/// Consecutive-activation counter with a post-trigger cooldown.
#[derive(Debug, Clone, PartialEq)]
pub struct GateState {
    pub wake_threshold: f64,
    pub trigger_level: u32,
    pub activations: u32,
    pub cooldown_counter: u32,
    pub cooldown_frames: u32,
}

impl GateState {
    pub fn new(wake_threshold: f64, trigger_level: u32, cooldown_frames: u32) -> Self {
        Self {
            wake_threshold,
            trigger_level,
            activations: 0,
            cooldown_counter: 0,
            cooldown_frames,
        }
    }

    /// Scores at or above the threshold count as activations; below it the
    /// counter decays by one.
    pub fn update(&mut self, p: f64) -> GateAction {
        if self.cooldown_counter > 0 {
            self.cooldown_counter -= 1;
            return GateAction::CooldownSkip;
        }
        if p >= self.wake_threshold {
            self.activations += 1;
            if self.activations >= self.trigger_level {
                self.activations = 0;
                self.cooldown_counter = self.cooldown_frames;
                return GateAction::Triggered;
            }
        } else {
            self.activations = self.activations.saturating_sub(1);
        }
        GateAction::Idle
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(rng: &mut SplitMix64, n: usize, dim: usize) -> Vec<LabeledWindow> {
        (0..n)
            .map(|i| LabeledWindow {
                input: (0..dim).map(|_| rng.next_signed()).collect(),
                label: (i % 2) as f64,
            })
            .collect()
    }

    #[test]
    fn forward_closed_forms() {
        let window = vec![Embedding96([0.3; 96]); 2];
        let mut model = FcnModel::zeros(2, 4);
        assert_eq!(model.forward(&window).unwrap(), 0.5);
        model.b2 = 10.0;
        assert!((model.forward(&window).unwrap() - 0.9999546).abs() < 1e-7);
        assert!(model.forward(&window[..1]).is_err());

        let hand = FcnModel {
            ww_windows: 1,
            hidden: 1,
            w1: vec![1.0, 1.0],
            b1: vec![0.0],
            w2: vec![1.0],
            b2: 0.0,
        };
        assert_eq!(hand.forward_flat(&[1.0, -1.0]).unwrap(), 0.5);
    }

    #[test]
    fn monotone_in_output_bias() {
        let mut rng = SplitMix64::new(3);
        let mut model = FcnModel::init_with_input(8, 4, 3, 1);
        let x: Vec<f64> = (0..8).map(|_| rng.next_signed()).collect();
        let mut last = 0.0;
        for b in -20..20 {
            model.b2 = b as f64 * 0.5;
            let p = model.forward_flat(&x).unwrap();
            assert!(p >= last);
            last = p;
        }
    }

    #[test]
    fn loss_closed_forms() {
        let model = FcnModel::init_with_input(2, 1, 0, 1);
        let mut zero = model.clone();
        zero.w1.iter_mut().for_each(|w| *w = 0.0);
        zero.w2[0] = 0.0;
        let item = LabeledWindow {
            input: vec![0.4, -0.2],
            label: 1.0,
        };
        let (loss, _) = zero.loss_and_grad(std::slice::from_ref(&item)).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        zero.b2 = 40.0;
        let (loss, _) = zero.loss_and_grad(&[item]).unwrap();
        assert!(loss < 1e-6);
        assert!(matches!(zero.loss_and_grad(&[]), Err(TrainError::EmptyBatch)));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SplitMix64::new(21);
        let model = FcnModel::init_with_input(6, 3, 21, 1);
        let mut model = model;
        model.b1.iter_mut().for_each(|b| *b = 0.1);
        let batch = random_batch(&mut rng, 5, 6);
        let (_, grad) = model.loss_and_grad(&batch).unwrap();
        let analytic: Vec<f64> = grad.w1.iter().chain(&grad.b1).chain(&grad.w2).copied().chain([grad.b2]).collect();
        let base = model.params();
        let h = 1e-5;
        for (i, &g) in analytic.iter().enumerate() {
            let mut probe = model.clone();
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params(&p);
            let up = probe.loss_and_grad(&batch).unwrap().0;
            p[i] = base[i] - h;
            probe.set_params(&p);
            let down = probe.loss_and_grad(&batch).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-3), "param {i}: {fd} vs {g}");
        }
    }

    #[test]
    fn accumulation_equals_full_batch() {
        let mut rng = SplitMix64::new(5);
        let data = random_batch(&mut rng, 16, 10);
        let model = FcnModel::init_with_input(10, 4, 5, 1);
        let mut full = Trainer::new(model.clone(), 0.1, 0.9);
        let mut accum = Trainer::new(model, 0.1, 0.9);
        for _ in 0..3 {
            full.step(&[&data]).unwrap();
            let parts: Vec<&[LabeledWindow]> = data.chunks(4).collect();
            accum.step(&parts).unwrap();
        }
        for (a, b) in full.model.params().iter().zip(accum.model.params()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn training_rejects_single_class() {
        let data = vec![
            LabeledWindow {
                input: vec![0.0; 4],
                label: 1.0
            };
            3
        ];
        let model = FcnModel::init_with_input(4, 2, 0, 1);
        assert!(matches!(
            train(model, &data, &TrainConfig::default()),
            Err(TrainError::SingleClassData)
        ));
    }

    #[test]
    fn separates_gaussian_blobs_deterministically() {
        let mut rng = SplitMix64::new(99);
        let dim = 12;
        let data: Vec<LabeledWindow> = (0..200)
            .map(|i| {
                let label = (i % 2) as f64;
                let center = if label > 0.5 { 0.5 } else { -0.5 };
                LabeledWindow {
                    input: (0..dim).map(|_| center + 0.3 * rng.gaussian()).collect(),
                    label,
                }
            })
            .collect();

        // Oracle: logistic regression by full-batch gradient descent.
        let mut w = vec![0.0; dim];
        let mut b = 0.0;
        for _ in 0..500 {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for d in &data {
                let z: f64 = w.iter().zip(&d.input).map(|(a, x)| a * x).sum::<f64>() + b;
                let err = sigmoid(z) - d.label;
                gw.iter_mut().zip(&d.input).for_each(|(g, x)| *g += err * x);
                gb += err;
            }
            w.iter_mut().zip(&gw).for_each(|(a, g)| *a -= 0.5 * g / 200.0);
            b -= 0.5 * gb / 200.0;
        }
        let oracle_loss: f64 = data
            .iter()
            .map(|d| {
                let z: f64 = w.iter().zip(&d.input).map(|(a, x)| a * x).sum::<f64>() + b;
                bce(sigmoid(z), d.label)
            })
            .sum::<f64>()
            / 200.0;
        assert!(oracle_loss < 0.1, "oracle {oracle_loss}");

        let config = TrainConfig {
            learning_rate: 1e-2,
            micro_batch: 8,
            accum_steps: 4,
            epochs: 200,
            seed: 4,
            momentum: 0.9,
        };
        let model = FcnModel::init_with_input(dim, 16, 4, 1);
        let a = train(model.clone(), &data, &config).unwrap();
        let b = train(model, &data, &config).unwrap();
        assert!(a.final_loss() < 0.1, "loss {}", a.final_loss());
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses.len(), 200);
    }

    #[test]
    fn wgfc_round_trip() {
        let model = FcnModel::init(2, 5, 8);
        let bytes = model.to_bytes();
        let loaded = FcnModel::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes(), bytes);
        let mut rounded = model.params();
        crate::binfmt::round_to_f32(&mut rounded);
        assert_eq!(loaded.params(), rounded);
        assert!(FcnModel::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn gate_examples() {
        let mut gate = GateState::new(0.5, 3, 20);
        let actions: Vec<_> = [0.9, 0.9, 0.9].iter().map(|&p| gate.update(p)).collect();
        assert_eq!(actions, [GateAction::Idle, GateAction::Idle, GateAction::Triggered]);
        assert_eq!(gate.cooldown_counter, 20);
        for _ in 0..20 {
            assert_eq!(gate.update(0.99), GateAction::CooldownSkip);
        }
        assert_eq!(gate.update(0.99), GateAction::Idle);
        assert_eq!(gate.activations, 1);

        let mut gate = GateState::new(0.5, 3, 20);
        let actions: Vec<_> = [0.9, 0.9, 0.1, 0.9, 0.9, 0.9]
            .iter()
            .map(|&p| gate.update(p))
            .collect();
        // activations run 1, 2, 1, 2, 3
        assert_eq!(actions.iter().position(|a| *a == GateAction::Triggered), Some(4));
        assert!(actions[..4].iter().all(|a| *a == GateAction::Idle));
    }

    #[test]
    fn gate_ties_trigger() {
        let mut gate = GateState::new(0.5, 1, 0);
        assert_eq!(gate.update(0.5), GateAction::Triggered);
        assert_eq!(gate.update(0.4999), GateAction::Idle);
    }
}
