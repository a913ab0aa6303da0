//! Soft prompts in front of a frozen transformer encoder with a sigmoid
//! classification head.
//!
//! A window's tokens are embedded, the prompt bank is prepended, the
//! sequence runs through a pre-norm encoder whose weights never change, and
//! a linear head turns each data position's hidden state into an anomaly
//! probability. Only the prompts (and, by default, the head) are trained.

mod checkpoint;
mod forward;
pub mod linalg;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use forward::{
    assemble_input, classify, embed, encoder_forward, predict_window, Classification, ForwardCache,
    Gradients,
};
pub use linalg::{Matrix, Real};
pub use params::{
    init_model, ClassifierHead, EmbeddingMatrix, EncoderLayer, FrozenEncoder, SoftPromptBank,
    SpearModel,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};

/// How per-position probabilities reduce to a window score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Vocabulary size: one token per quantization bin.
    pub n_bins: u32,
    /// Number of soft prompt vectors.
    pub prompt_len: usize,
    pub max_seq_len: usize,
    pub seed: u64,
    /// Std of the Gaussian used for encoder weights, prompts and the head
    /// weight. Encoder biases start at zero.
    pub init_std: f64,
    /// Std of the Gaussian used for the token embedding table.
    pub embed_std: f64,
    pub aggregation: Aggregation,
    /// Lets the embedding table receive gradient updates.
    pub trainable_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 128,
            n_bins: 20,
            prompt_len: 20,
            max_seq_len: 160,
            seed: 0,
            init_std: 0.2,
            embed_std: 1.0,
            aggregation: Aggregation::Mean,
            trainable_embeddings: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SpearError::Config(msg));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return fail("model dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "model.d_model {} is not divisible by model.n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.d_model.is_multiple_of(2) {
            return fail(format!("model.d_model must be even, got {}", self.d_model));
        }
        if self.n_bins < 2 {
            return fail(format!("model.n_bins must be >= 2, got {}", self.n_bins));
        }
        if self.prompt_len == 0 {
            return fail("model.prompt_len must be >= 1".into());
        }
        if self.max_seq_len < self.prompt_len + 1 {
            return fail(format!(
                "model.max_seq_len {} leaves no room after {} prompts",
                self.max_seq_len, self.prompt_len
            ));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite() && self.embed_std >= 0.0 && self.embed_std.is_finite()) {
            return fail("model init standard deviations must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Longest window (in tokens) that fits after the prompt block.
    pub fn max_window_len(&self) -> usize {
        self.max_seq_len - self.prompt_len
    }
}

/// Which parameters receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableSet {
    PromptsOnly,
    #[default]
    PromptsAndHead,
}

impl TrainableSet {
    pub fn includes_head(self) -> bool {
        matches!(self, TrainableSet::PromptsAndHead)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = ModelConfig {
            d_model: 32,
            n_heads: 3,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(SpearError::Config(_))));
        let bad = ModelConfig {
            prompt_len: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            max_seq_len: 20,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
