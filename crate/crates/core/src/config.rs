//! Run configuration: one JSON document with a default for every field.
//!
//! Nested seeds (data, model init, shuffle, oversampling, split) that are
//! not written explicitly are derived from the top-level seed through named
//! streams, and the fully-resolved document is what every stage reads.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::GenConfig;
use crate::error::{Result, SpearError};
use crate::labeler::LabelerConfig;
use crate::model::ModelConfig;
use crate::rng::{derive_seed, Stream};
use crate::series::WindowSpec;
use crate::train::TrainConfig;

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

/// Where window labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    /// The per-observation `label` column (or the generator's ground truth).
    #[default]
    GroundTruth,
    /// The statistical detectors, run on each window.
    Labeler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Series CSV to read; when absent the synthetic generator is used.
    pub series_csv: Option<PathBuf>,
    pub label_source: LabelSource,
    /// Fraction of series (per class) held out for evaluation.
    pub test_fraction: f64,
    /// Seed of the stratified train/test split.
    pub split_seed: u64,
    pub synth: GenConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            series_csv: None,
            label_source: LabelSource::GroundTruth,
            test_fraction: 0.2,
            split_seed: 0,
            synth: GenConfig::default(),
        }
    }
}

/// How min-max parameters are fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// One range per series.
    #[default]
    PerStream,
    /// One range over all training series.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub scale: ScaleMode,
    pub n_bins: u32,
    pub window: WindowSpec,
    /// Token length every window is truncated or padded to.
    pub max_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            scale: ScaleMode::PerStream,
            n_bins: 20,
            window: WindowSpec::default(),
            max_len: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsmoteConfig {
    pub enabled: bool,
    pub k: usize,
    pub seed: u64,
}

impl Default for TsmoteConfig {
    fn default() -> Self {
        TsmoteConfig {
            enabled: false,
            k: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub prompt_sizes: Vec<usize>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            prompt_sizes: vec![10, 20, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub preprocess: PreprocessConfig,
    pub labeler: LabelerConfig,
    pub tsmote: TsmoteConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Store the frozen tensors in checkpoints instead of rebuilding them
    /// from the model seed on load.
    pub checkpoint_frozen: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            labeler: LabelerConfig::default(),
            tsmote: TsmoteConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            output_dir: PathBuf::from("spear-out"),
            seed: 42,
            checkpoint_frozen: false,
        }
    }
}

/// Seeds written explicitly in the source document.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ExplicitSeeds {
    data: bool,
    split: bool,
    tsmote: bool,
    model: bool,
    train: bool,
}

fn has_path(doc: &serde_json::Value, path: &[&str]) -> bool {
    let mut cur = doc;
    for key in path {
        match cur.get(key) {
            Some(next) => cur = next,
            None => return false,
        }
    }
    true
}

impl ExplicitSeeds {
    fn from_doc(doc: &serde_json::Value) -> Self {
        ExplicitSeeds {
            data: has_path(doc, &["data", "synth", "seed"]),
            split: has_path(doc, &["data", "split_seed"]),
            tsmote: has_path(doc, &["tsmote", "seed"]),
            model: has_path(doc, &["model", "seed"]),
            train: has_path(doc, &["train", "seed"]),
        }
    }
}

/// Command-line overrides applied before seed derivation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses a document, reporting the JSON path of any offending field.
    pub fn from_json_str(text: &str, overrides: &Overrides) -> Result<Self> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SpearError::Config(format!("invalid JSON: {e}")))?;
        let explicit = ExplicitSeeds::from_doc(&doc);
        let mut cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
            let path = e.path().to_string();
            SpearError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(dir) = &overrides.output_dir {
            cfg.output_dir = dir.clone();
        }
        cfg.derive_seeds(explicit, overrides.seed.is_some());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| SpearError::Config(format!("{}: {e}", p.display())))?,
            None => "{}".to_string(),
        };
        Self::from_json_str(&text, overrides)
    }

    /// Fills in every seed that was not explicit. A `--seed` override
    /// re-derives all nested seeds so the flag always takes effect.
    fn derive_seeds(&mut self, explicit: ExplicitSeeds, seed_overridden: bool) {
        let keep = |flag: bool| flag && !seed_overridden;
        if !keep(explicit.data) {
            self.data.synth.seed = derive_seed(self.seed, Stream::Data);
        }
        if !keep(explicit.split) {
            self.data.split_seed = derive_seed(self.seed, Stream::Split);
        }
        if !keep(explicit.tsmote) {
            self.tsmote.seed = derive_seed(self.seed, Stream::Tsmote);
        }
        if !keep(explicit.model) {
            self.model.seed = derive_seed(self.seed, Stream::Init);
        }
        if !keep(explicit.train) {
            self.train.seed = derive_seed(self.seed, Stream::Shuffle);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SpearError::Config(msg));
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return fail(format!(
                "data.test_fraction must lie in (0, 1), got {}",
                self.data.test_fraction
            ));
        }
        self.data.synth.validate()?;
        self.preprocess.window.validate()?;
        if self.preprocess.n_bins < 2 {
            return fail(format!("preprocess.n_bins must be >= 2, got {}", self.preprocess.n_bins));
        }
        if self.preprocess.max_len == 0 {
            return fail("preprocess.max_len must be >= 1".into());
        }
        self.labeler.validate()?;
        if self.tsmote.k == 0 {
            return fail("tsmote.k must be >= 1".into());
        }
        self.model.validate()?;
        if self.model.n_bins != self.preprocess.n_bins {
            return fail(format!(
                "model.n_bins {} differs from preprocess.n_bins {}",
                self.model.n_bins, self.preprocess.n_bins
            ));
        }
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.eval.threshold) {
            return fail(format!("eval.threshold must lie in [0, 1], got {}", self.eval.threshold));
        }
        if self.ablate.prompt_sizes.is_empty() || self.ablate.prompt_sizes.contains(&0) {
            return fail("ablate.prompt_sizes must be non-empty and positive".into());
        }
        let longest_prompt = self
            .ablate
            .prompt_sizes
            .iter()
            .copied()
            .chain(std::iter::once(self.model.prompt_len))
            .max()
            .unwrap_or(0);
        if longest_prompt + self.preprocess.max_len > self.model.max_seq_len {
            return fail(format!(
                "model.max_seq_len {} is shorter than prompt size {} + preprocess.max_len {}",
                self.model.max_seq_len, longest_prompt, self.preprocess.max_len
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes `config.resolved.json` into the output directory.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir).map_err(|e| SpearError::io(&self.output_dir, e))?;
        let path = self.output_dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| SpearError::io(&path, e))?;
        Ok(path)
    }
}
