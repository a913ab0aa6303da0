//! Soft-prompt tuning of a frozen transformer encoder for time-series anomaly
//! detection, together with the statistical context-anomaly labelers,
//! minority oversampling and evaluation metrics around it.

pub mod config;
pub mod datagen;
pub mod error;
pub mod rng;
pub mod series;
pub mod labeler;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod train;
pub mod tsmote;

pub use error::{Result, SpearError};
