//! Loss, reverse pass, AdamW, the linear schedule and the epoch loop.
//!
//! Only the soft prompts (and optionally the head and embedding table)
//! receive gradients. Encoder weights are read during the reverse pass but
//! no gradient buffer is ever allocated for them.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::metrics::{evaluate, MetricsReport};
use crate::model::{
    load_checkpoint, predict_window, save_checkpoint, Aggregation, Gradients, Matrix, Real, SpearModel,
    TrainableSet,
};
use crate::rng::{rng_from_seed, SpearRng};
use crate::series::QuantizedWindow;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

/// What the cross-entropy is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// The aggregated window score against the window label.
    #[default]
    Window,
    /// Every real position's probability against the window label, averaged.
    Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub trainable_set: TrainableSet,
    pub loss_mode: LossMode,
    /// Seed of the per-epoch shuffle.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-2,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            trainable_set: TrainableSet::PromptsAndHead,
            loss_mode: LossMode::Window,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SpearError::Config(msg));
        if self.epochs < 1 {
            return fail(format!("train.epochs must be >= 1, got {}", self.epochs));
        }
        if self.batch_size < 1 {
            return fail(format!("train.batch_size must be >= 1, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("train.learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("train.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("train.{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return fail(format!("train.eps must be > 0, got {}", self.eps));
        }
        Ok(())
    }
}

/// Binary cross-entropy of one probability against a 0/1 label.
pub fn bce_loss(score: f64, label: u8) -> f64 {
    let p = score.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Loss of one window under the given mode, from its position probabilities.
pub fn window_loss(probabilities: &[f64], score: f64, label: u8, mode: LossMode) -> f64 {
    match mode {
        LossMode::Window => bce_loss(score, label),
        LossMode::Position => {
            probabilities.iter().map(|&p| bce_loss(p, label)).sum::<f64>() / probabilities.len().max(1) as f64
        }
    }
}

fn unclamped(p: f64) -> bool {
    p > BCE_EPS && p < 1.0 - BCE_EPS
}

/// Loss and trainable-parameter gradients of a single window.
pub fn example_gradient<T: Real>(
    model: &SpearModel<T>,
    window: &QuantizedWindow,
    set: TrainableSet,
    mode: LossMode,
) -> Result<(f64, Gradients<T>)> {
    let (out, cache) = model.forward_cached(window)?;
    let n = out.positions.len();
    if n == 0 {
        return Err(SpearError::InvalidInput(format!(
            "window {} has no unmasked positions",
            window.source_id
        )));
    }
    let y = f64::from(window.label);
    let probs: Vec<f64> = out.probabilities.iter().map(|p| p.as_f64()).collect();
    let score = out.score.as_f64();
    let loss = window_loss(&probs, score, window.label, mode);

    // dL/dz for each real position.
    let mut dz = vec![T::zero(); n];
    match mode {
        LossMode::Window => {
            if unclamped(score) {
                let dscore = (score - y) / (score * (1.0 - score));
                match model.config.aggregation {
                    Aggregation::Mean => {
                        for (g, &p) in dz.iter_mut().zip(&probs) {
                            *g = T::of(dscore / n as f64 * p * (1.0 - p));
                        }
                    }
                    Aggregation::Max => {
                        let p = probs[out.argmax];
                        dz[out.argmax] = T::of(dscore * p * (1.0 - p));
                    }
                }
            }
        }
        LossMode::Position => {
            for (g, &p) in dz.iter_mut().zip(&probs) {
                if unclamped(p) {
                    *g = T::of((p - y) / n as f64);
                }
            }
        }
    }

    let m = model.config.prompt_len;
    let mut grads = Gradients::zeros(model, set.includes_head());
    let mut d_hidden = Matrix::zeros(cache.hidden.rows, cache.hidden.cols);
    for (&t, &g) in out.positions.iter().zip(&dz) {
        let h = cache.hidden.row(m + t);
        for (o, &w) in d_hidden.row_mut(m + t).iter_mut().zip(&model.head.weight) {
            *o = g * w;
        }
        if let Some(w) = grads.head_weight.as_mut() {
            crate::model::linalg::axpy(g, h, w);
        }
        if let Some(b) = grads.head_bias.as_mut() {
            *b = *b + g;
        }
    }
    let d_input = model.input_gradient(&cache, d_hidden);
    let d = d_input.cols;
    grads.prompts.data.copy_from_slice(&d_input.data[..m * d]);
    if let Some(e) = grads.embedding.as_mut() {
        for (t, &token) in window.tokens.iter().enumerate() {
            let src = d_input.row(m + t);
            let dst = e.row_mut(token as usize);
            for (a, &b) in dst.iter_mut().zip(src) {
                *a = *a + b;
            }
        }
    }
    if !grads.is_finite() {
        return Err(SpearError::Numeric(format!(
            "non-finite gradient for window {}",
            window.source_id
        )));
    }
    Ok((loss, grads))
}

/// Mean loss and mean gradients over a batch. Examples run in parallel; the
/// reduction follows batch order so the result does not depend on the
/// number of worker threads.
pub fn backward<T: Real>(
    model: &SpearModel<T>,
    batch: &[&QuantizedWindow],
    set: TrainableSet,
    mode: LossMode,
) -> Result<(f64, Gradients<T>)> {
    if batch.is_empty() {
        return Err(SpearError::InvalidInput("empty batch".into()));
    }
    let parts: Vec<Result<(f64, Gradients<T>)>> =
        batch.par_iter().map(|w| example_gradient(model, w, set, mode)).collect();
    let scale = T::one() / T::of(batch.len() as f64);
    let mut total = Gradients::zeros(model, set.includes_head());
    let mut loss = 0.0;
    for part in parts {
        let (l, g) = part?;
        loss += l;
        total.add_scaled(&g, scale);
    }
    Ok((loss / batch.len() as f64, total))
}

/// Learning rate after `step` of `total_steps`, decaying linearly to zero.
pub fn linear_lr(step: u64, total_steps: u64, base_lr: f64) -> f64 {
    if total_steps == 0 {
        return base_lr;
    }
    (base_lr * (1.0 - step as f64 / total_steps as f64)).max(0.0)
}

/// Optimizer and loop state.
#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub step: u64,
    pub first_moment: Gradients<T>,
    pub second_moment: Gradients<T>,
    /// Mean train loss of each finished epoch.
    pub loss_history: Vec<f64>,
    pub rng: SpearRng,
}

impl<T: Real> TrainState<T> {
    pub fn new(model: &SpearModel<T>, set: TrainableSet, seed: u64) -> Self {
        TrainState {
            step: 0,
            first_moment: Gradients::zeros(model, set.includes_head()),
            second_moment: Gradients::zeros(model, set.includes_head()),
            loss_history: Vec::new(),
            rng: rng_from_seed(seed),
        }
    }
}

struct AdamConsts<T> {
    lr: T,
    decay: T,
    beta1: T,
    beta2: T,
    eps: T,
    bias1: T,
    bias2: T,
}

fn adam_update<T: Real>(theta: &mut [T], g: &[T], m: &mut [T], v: &mut [T], c: &AdamConsts<T>, decay: bool) {
    let one = T::one();
    for i in 0..theta.len() {
        m[i] = c.beta1 * m[i] + (one - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (one - c.beta2) * g[i] * g[i];
        let m_hat = m[i] / c.bias1;
        let v_hat = v[i] / c.bias2;
        if decay {
            theta[i] = theta[i] * (one - c.lr * c.decay);
        }
        theta[i] = theta[i] - c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

/// One AdamW update with bias correction. Weight decay is decoupled and
/// applies to the prompt matrix and head weight only.
pub fn adamw_step<T: Real>(
    model: &mut SpearModel<T>,
    state: &mut TrainState<T>,
    grads: &Gradients<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(SpearError::Numeric("non-finite gradient passed to optimizer".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c = AdamConsts {
        lr: T::of(lr),
        decay: T::of(cfg.weight_decay),
        beta1: T::of(cfg.beta1),
        beta2: T::of(cfg.beta2),
        eps: T::of(cfg.eps),
        bias1: T::of(1.0 - cfg.beta1.powi(t)),
        bias2: T::of(1.0 - cfg.beta2.powi(t)),
    };
    let (m, v) = (&mut state.first_moment, &mut state.second_moment);
    adam_update(
        &mut model.prompts.prompts.data,
        &grads.prompts.data,
        &mut m.prompts.data,
        &mut v.prompts.data,
        &c,
        true,
    );
    if let (Some(g), Some(mw), Some(vw)) = (&grads.head_weight, &mut m.head_weight, &mut v.head_weight) {
        adam_update(&mut model.head.weight, g, mw, vw, &c, true);
    }
    if let (Some(g), Some(mb), Some(vb)) = (grads.head_bias, &mut m.head_bias, &mut v.head_bias) {
        adam_update(
            std::slice::from_mut(&mut model.head.bias),
            &[g],
            std::slice::from_mut(mb),
            std::slice::from_mut(vb),
            &c,
            false,
        );
    }
    if let (Some(g), Some(me), Some(ve)) = (&grads.embedding, &mut m.embedding, &mut v.embedding) {
        adam_update(&mut model.embedding.table.data, &g.data, &mut me.data, &mut ve.data, &c, false);
    }
    Ok(())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Learning rate at the first step of the epoch.
    pub lr: f64,
    pub val_metrics: Option<MetricsReport>,
    pub frozen_checksum: u32,
}

/// Window scores for every window, in input order.
pub fn predict_scores<T: Real>(model: &SpearModel<T>, windows: &[QuantizedWindow]) -> Result<Vec<f64>> {
    let scores: Vec<Result<f64>> = windows
        .par_iter()
        .map(|w| predict_window(model, w).map(|(s, _)| s.as_f64()))
        .collect();
    scores.into_iter().collect()
}

/// Runs the full schedule. `on_epoch` sees each record as soon as the epoch
/// finishes (used for streaming the log).
pub fn train<T: Real>(
    model: &mut SpearModel<T>,
    train_set: &[QuantizedWindow],
    val_set: &[QuantizedWindow],
    cfg: &TrainConfig,
    threshold: f64,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(SpearError::InvalidInput("training set is empty".into()));
    }
    model.head.trainable = cfg.trainable_set.includes_head();
    let frozen_at_start = model.frozen_checksum();
    let mut state = TrainState::new(model, cfg.trainable_set, cfg.seed);
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut state.rng);
        let epoch_lr = linear_lr(state.step, total_steps, cfg.learning_rate);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&QuantizedWindow> = chunk.iter().map(|&i| &train_set[i]).collect();
            let lr = linear_lr(state.step, total_steps, cfg.learning_rate);
            let (loss, grads) = backward(model, &batch, cfg.trainable_set, cfg.loss_mode).map_err(|e| match e {
                SpearError::Numeric(msg) => {
                    SpearError::Numeric(format!("epoch {epoch}, step {}: {msg}", state.step + 1))
                }
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(SpearError::Numeric(format!(
                    "non-finite loss at epoch {epoch}, step {}",
                    state.step + 1
                )));
            }
            adamw_step(model, &mut state, &grads, lr, cfg)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        state.loss_history.push(train_loss);

        let frozen_checksum = model.frozen_checksum();
        if frozen_checksum != frozen_at_start {
            return Err(SpearError::Numeric(format!(
                "frozen parameters changed during epoch {epoch} ({frozen_at_start:08x} -> {frozen_checksum:08x})"
            )));
        }
        let val_metrics = if val_set.is_empty() {
            None
        } else {
            let scores = predict_scores(model, val_set)?;
            let labels: Vec<u8> = val_set.iter().map(|w| w.label).collect();
            Some(evaluate(&scores, &labels, threshold)?.0)
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            lr: epoch_lr,
            val_metrics,
            frozen_checksum,
        };
        tracing::info!(epoch, train_loss, lr = epoch_lr, "epoch finished");
        on_epoch(&record)?;
        history.push(record);
    }
    Ok(history)
}

/// Saves prompts, head and config; frozen tensors only when requested.
pub fn save_artifact<T: Real>(model: &SpearModel<T>, path: &Path, include_frozen: bool) -> Result<()> {
    save_checkpoint(model, include_frozen, path)
}

pub fn load_artifact<T: Real>(path: &Path) -> Result<SpearModel<T>> {
    load_checkpoint(path)
}
