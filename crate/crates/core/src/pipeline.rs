//! The end-to-end stages behind each subcommand. Every stage reads the
//! resolved [`RunConfig`] and writes plain files into its output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{LabelSource, RunConfig, ScaleMode};
use crate::datagen::{gen_dataset, write_truth_csv};
use crate::error::{Result, SpearError};
use crate::labeler::{label_series, summarize, write_labels_csv, LabelSummary};
use crate::metrics::{evaluate, write_report, MetricsReport};
use crate::model::{init_model, Real, SpearModel};
use crate::rng::rng_from_seed;
use crate::series::{read_series_csv, window, write_series_csv, QuantizedWindow, ScaleParams, TimeSeries};
use crate::train::{load_artifact, predict_scores, save_artifact, train, EpochRecord};
use crate::tsmote::{balance, ClassCounts, LabeledDataset, LabeledSample};

pub const SERIES_FILE: &str = "series.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const LABELS_FILE: &str = "labels.csv";
pub const LABEL_SUMMARY_FILE: &str = "label_summary.json";
pub const BALANCED_FILE: &str = "balanced.csv";
pub const RESAMPLE_SUMMARY_FILE: &str = "resample_summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const ABLATION_JSON_FILE: &str = "ablation.json";
pub const ABLATION_TABLE_FILE: &str = "ablation.md";

/// Numeric precision of model computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One model-ready window and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedWindow {
    pub id: String,
    pub series_id: String,
    pub split: Split,
    /// Min-max scaled values (real length, before padding).
    pub scaled: Vec<f64>,
    pub window: QuantizedWindow,
}

/// Series from `data.series_csv`, or freshly generated.
pub fn load_series(cfg: &RunConfig) -> Result<Vec<TimeSeries>> {
    match &cfg.data.series_csv {
        Some(path) => read_series_csv(path),
        None => Ok(gen_dataset(&cfg.data.synth)?.series),
    }
}

/// Per-class shuffle, holding out `round(fraction * class size)` of each
/// class. Returns `true` for held-out items.
pub fn stratified_split(labels: &[u8], test_fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = rng_from_seed(seed);
    let mut is_test = vec![false; labels.len()];
    for class in [0u8, 1] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n_test = (test_fraction * members.len() as f64).round() as usize;
        for &i in &members[..n_test] {
            is_test[i] = true;
        }
    }
    is_test
}

fn window_label(w: &TimeSeries, cfg: &RunConfig) -> Result<u8> {
    match cfg.data.label_source {
        LabelSource::GroundTruth => w.label().ok_or_else(|| {
            SpearError::InvalidInput(format!(
                "series {} has no label column; set data.label_source to \"labeler\"",
                w.id
            ))
        }),
        LabelSource::Labeler => Ok(u8::from(label_series(w, &cfg.labeler).is_anomalous())),
    }
}

/// Windows, labels, split and quantization for every series.
pub fn prepare(cfg: &RunConfig, series: &[TimeSeries]) -> Result<Vec<PreparedWindow>> {
    let pre = &cfg.preprocess;
    let mut per_series: Vec<Vec<(TimeSeries, u8)>> = Vec::with_capacity(series.len());
    for s in series {
        s.validate()?;
        let mut items = Vec::new();
        for w in window(s, &pre.window)? {
            let label = window_label(&w, cfg)?;
            items.push((w, label));
        }
        per_series.push(items);
    }
    if per_series.iter().all(|w| w.is_empty()) {
        return Err(SpearError::InvalidInput(format!(
            "no series is long enough for windows of {} points",
            pre.window.size
        )));
    }
    let strata: Vec<u8> = per_series
        .iter()
        .map(|ws| ws.iter().map(|(_, l)| *l).max().unwrap_or(0))
        .collect();
    let is_test = stratified_split(&strata, cfg.data.test_fraction, cfg.data.split_seed);

    let global = match pre.scale {
        ScaleMode::Global => {
            let train_values: Vec<f64> = series
                .iter()
                .zip(&is_test)
                .filter(|(_, &t)| !t)
                .flat_map(|(s, _)| s.values.iter().copied())
                .collect();
            Some(ScaleParams::fit(&train_values)?)
        }
        ScaleMode::PerStream => None,
    };

    let mut out = Vec::new();
    for ((s, items), &test) in series.iter().zip(per_series).zip(&is_test) {
        let scale = match global {
            Some(g) => g,
            None => ScaleParams::fit(&s.values)?,
        };
        for (w, label) in items {
            let scaled: Vec<f64> = w.values.iter().map(|&v| scale.apply(v)).collect();
            let q = QuantizedWindow::from_scaled(&scaled, scale, pre.n_bins, pre.max_len, label, w.id.clone())?;
            out.push(PreparedWindow {
                id: w.id,
                series_id: s.id.clone(),
                split: if test { Split::Test } else { Split::Train },
                scaled,
                window: q,
            });
        }
    }
    Ok(out)
}

/// Training windows in scaled units as an oversampling dataset.
fn tsmote_dataset(windows: &[&PreparedWindow]) -> Result<LabeledDataset> {
    LabeledDataset::new(
        windows
            .iter()
            .map(|w| LabeledSample {
                id: w.id.clone(),
                features: w.scaled.clone(),
                label: w.window.label,
                synthetic: false,
            })
            .collect(),
    )
}

/// Balanced version of the training split.
pub fn oversample_train(cfg: &RunConfig, prepared: &[PreparedWindow]) -> Result<LabeledDataset> {
    let train: Vec<&PreparedWindow> = prepared.iter().filter(|w| w.split == Split::Train).collect();
    balance(&tsmote_dataset(&train)?, cfg.tsmote.k, cfg.tsmote.seed)
}

/// Training and test windows, with oversampled training windows appended
/// when enabled.
pub fn model_inputs(cfg: &RunConfig, prepared: &[PreparedWindow]) -> Result<(Vec<QuantizedWindow>, Vec<QuantizedWindow>)> {
    let mut train: Vec<QuantizedWindow> = prepared
        .iter()
        .filter(|w| w.split == Split::Train)
        .map(|w| w.window.clone())
        .collect();
    let test: Vec<QuantizedWindow> = prepared
        .iter()
        .filter(|w| w.split == Split::Test)
        .map(|w| w.window.clone())
        .collect();
    if cfg.tsmote.enabled {
        let balanced = oversample_train(cfg, prepared)?;
        let pre = &cfg.preprocess;
        for s in balanced.samples.iter().filter(|s| s.synthetic) {
            let scale = ScaleParams { min: 0.0, max: 1.0 };
            train.push(QuantizedWindow::from_scaled(
                &s.features,
                scale,
                pre.n_bins,
                pre.max_len,
                s.label,
                s.id.clone(),
            )?);
        }
    }
    Ok((train, test))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SpearError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| SpearError::io(path, e))
}

/// `synth`: series CSV with per-observation labels plus ground truth.
pub fn run_synth(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.output_dir)?;
    let ds = gen_dataset(&cfg.data.synth)?;
    write_series_csv(cfg.output_dir.join(SERIES_FILE), &ds.series)?;
    write_truth_csv(cfg.output_dir.join(TRUTH_FILE), &ds.truth)?;
    tracing::info!(n_series = ds.series.len(), "synthetic corpus written");
    Ok(())
}

/// `label`: detector labels for every series.
pub fn run_label(cfg: &RunConfig) -> Result<LabelSummary> {
    ensure_dir(&cfg.output_dir)?;
    let series = load_series(cfg)?;
    let labels: Vec<_> = series.iter().map(|s| label_series(s, &cfg.labeler)).collect();
    write_labels_csv(cfg.output_dir.join(LABELS_FILE), &labels)?;
    let summary = summarize(&labels);
    write_json(&cfg.output_dir.join(LABEL_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleSummary {
    pub before: CountsJson,
    pub after: CountsJson,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsJson {
    pub negatives: usize,
    pub positives: usize,
}

impl From<ClassCounts> for CountsJson {
    fn from(c: ClassCounts) -> Self {
        CountsJson {
            negatives: c.negatives,
            positives: c.positives,
        }
    }
}

/// `resample`: balances the training windows and writes them as
/// `id,label,synthetic,x0..x{L-1}` in scaled units.
pub fn run_resample(cfg: &RunConfig) -> Result<ResampleSummary> {
    ensure_dir(&cfg.output_dir)?;
    let prepared = prepare(cfg, &load_series(cfg)?)?;
    let train: Vec<&PreparedWindow> = prepared.iter().filter(|w| w.split == Split::Train).collect();
    let before = tsmote_dataset(&train)?;
    let after = balance(&before, cfg.tsmote.k, cfg.tsmote.seed)?;
    let path = cfg.output_dir.join(BALANCED_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| SpearError::csv(&path, e))?;
    let width = after.samples.first().map_or(0, |s| s.features.len());
    let mut header = vec!["id".to_string(), "label".into(), "synthetic".into()];
    header.extend((0..width).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(|e| SpearError::csv(&path, e))?;
    for s in &after.samples {
        let mut row = vec![s.id.clone(), s.label.to_string(), u8::from(s.synthetic).to_string()];
        row.extend(s.features.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(|e| SpearError::csv(&path, e))?;
    }
    w.flush().map_err(|e| SpearError::io(&path, e))?;
    let summary = ResampleSummary {
        before: before.class_counts().into(),
        after: after.class_counts().into(),
        k: cfg.tsmote.k,
    };
    write_json(&cfg.output_dir.join(RESAMPLE_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Result of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub checkpoint: PathBuf,
    pub n_train: usize,
    pub n_test: usize,
}

fn train_typed<T: Real>(cfg: &RunConfig, log_path: &Path, ckpt: &Path) -> Result<TrainOutcome> {
    let prepared = prepare(cfg, &load_series(cfg)?)?;
    let (train_set, test_set) = model_inputs(cfg, &prepared)?;
    let mut model: SpearModel<T> = init_model(&cfg.model)?;
    let file = std::fs::File::create(log_path).map_err(|e| SpearError::io(log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    let history = train(&mut model, &train_set, &test_set, &cfg.train, cfg.eval.threshold, |rec| {
        serde_json::to_writer(&mut log, rec)?;
        log.write_all(b"\n").map_err(|e| SpearError::io(log_path, e))
    })?;
    log.flush().map_err(|e| SpearError::io(log_path, e))?;
    save_artifact(&model, ckpt, cfg.checkpoint_frozen)?;
    Ok(TrainOutcome {
        history,
        checkpoint: ckpt.to_path_buf(),
        n_train: train_set.len(),
        n_test: test_set.len(),
    })
}

/// `train`: fits prompts (and head), writing the checkpoint and epoch log.
pub fn run_train(cfg: &RunConfig, precision: Precision) -> Result<TrainOutcome> {
    ensure_dir(&cfg.output_dir)?;
    let log = cfg.output_dir.join(TRAIN_LOG_FILE);
    let ckpt = cfg.output_dir.join(CHECKPOINT_FILE);
    match precision {
        Precision::F32 => train_typed::<f32>(cfg, &log, &ckpt),
        Precision::F64 => train_typed::<f64>(cfg, &log, &ckpt),
    }
}

fn load_for(cfg: &RunConfig, checkpoint: Option<&Path>) -> PathBuf {
    checkpoint.map_or_else(|| cfg.output_dir.join(CHECKPOINT_FILE), Path::to_path_buf)
}

fn scores_typed<T: Real>(ckpt: &Path, windows: &[QuantizedWindow]) -> Result<Vec<f64>> {
    let model: SpearModel<T> = load_artifact(ckpt)?;
    predict_scores(&model, windows)
}

fn scores(precision: Precision, ckpt: &Path, windows: &[QuantizedWindow]) -> Result<Vec<f64>> {
    match precision {
        Precision::F32 => scores_typed::<f32>(ckpt, windows),
        Precision::F64 => scores_typed::<f64>(ckpt, windows),
    }
}

/// `eval`: metrics and curves on the held-out split.
pub fn run_eval(cfg: &RunConfig, precision: Precision, checkpoint: Option<&Path>) -> Result<MetricsReport> {
    ensure_dir(&cfg.output_dir)?;
    let prepared = prepare(cfg, &load_series(cfg)?)?;
    let (_, test) = model_inputs(cfg, &prepared)?;
    let s = scores(precision, &load_for(cfg, checkpoint), &test)?;
    let labels: Vec<u8> = test.iter().map(|w| w.label).collect();
    let (report, curves) = evaluate(&s, &labels, cfg.eval.threshold)?;
    write_report(&cfg.output_dir, &report, &curves)?;
    Ok(report)
}

/// `predict`: one score per window, `window_id,series_id,split,label,score`.
pub fn run_predict(cfg: &RunConfig, precision: Precision, checkpoint: Option<&Path>) -> Result<PathBuf> {
    ensure_dir(&cfg.output_dir)?;
    let prepared = prepare(cfg, &load_series(cfg)?)?;
    let windows: Vec<QuantizedWindow> = prepared.iter().map(|w| w.window.clone()).collect();
    let s = scores(precision, &load_for(cfg, checkpoint), &windows)?;
    let path = cfg.output_dir.join(PREDICTIONS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| SpearError::csv(&path, e))?;
    w.write_record(["window_id", "series_id", "split", "label", "score"])
        .map_err(|e| SpearError::csv(&path, e))?;
    for (p, score) in prepared.iter().zip(&s) {
        w.write_record([
            p.id.as_str(),
            p.series_id.as_str(),
            p.split.name(),
            &p.window.label.to_string(),
            &score.to_string(),
        ])
        .map_err(|e| SpearError::csv(&path, e))?;
    }
    w.flush().map_err(|e| SpearError::io(&path, e))?;
    Ok(path)
}

/// One row of the prompt-size ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub prompt_size: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub final_train_loss: f64,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

/// Markdown table: one row per prompt size.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("Effect of soft prompt size\n\n");
    s.push_str("| Prompt size | Accuracy | F1-Score | Recall | Precision | AUROC | AUPR |\n");
    s.push_str("|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {} | {} |",
            r.prompt_size,
            r.accuracy,
            r.f1,
            r.recall,
            r.precision,
            fmt_opt(r.auroc),
            fmt_opt(r.aupr)
        );
    }
    s
}

/// `ablate`: trains and evaluates once per configured prompt size. Each
/// size gets its own subdirectory with the usual train/eval artifacts.
pub fn run_ablate(cfg: &RunConfig, precision: Precision) -> Result<Vec<AblationRow>> {
    ensure_dir(&cfg.output_dir)?;
    let mut rows = Vec::new();
    for &m in &cfg.ablate.prompt_sizes {
        let mut sub = cfg.clone();
        sub.model.prompt_len = m;
        sub.output_dir = cfg.output_dir.join(format!("prompt_{m}"));
        sub.validate()?;
        sub.write_resolved()?;
        tracing::info!(prompt_size = m, "ablation run");
        let outcome = run_train(&sub, precision)?;
        let report = run_eval(&sub, precision, None)?;
        rows.push(AblationRow {
            prompt_size: m,
            accuracy: report.accuracy,
            f1: report.f1,
            recall: report.recall,
            precision: report.precision,
            auroc: report.auroc,
            aupr: report.aupr,
            final_train_loss: outcome.history.last().map_or(f64::NAN, |r| r.train_loss),
        });
    }
    write_json(&cfg.output_dir.join(ABLATION_JSON_FILE), &rows)?;
    let table = cfg.output_dir.join(ABLATION_TABLE_FILE);
    std::fs::write(&table, ablation_table(&rows)).map_err(|e| SpearError::io(&table, e))?;
    Ok(rows)
}

/// Pipeline stages addressable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth,
    Label,
    Resample,
    Train,
    Eval,
    Predict,
    Ablate,
}

/// Runs one stage after echoing the resolved config into the output
/// directory.
pub fn run_stage(stage: Stage, cfg: &RunConfig, precision: Precision, checkpoint: Option<&Path>) -> Result<()> {
    cfg.write_resolved()?;
    match stage {
        Stage::Synth => run_synth(cfg),
        Stage::Label => run_label(cfg).map(|s| {
            tracing::info!(n_series = s.n_series, n_anomalous = s.n_anomalous, "labels written");
        }),
        Stage::Resample => run_resample(cfg).map(|s| {
            tracing::info!(?s.before, ?s.after, "resampled");
        }),
        Stage::Train => run_train(cfg, precision).map(|o| {
            tracing::info!(n_train = o.n_train, n_test = o.n_test, checkpoint = %o.checkpoint.display(), "trained");
        }),
        Stage::Eval => run_eval(cfg, precision, checkpoint).map(|r| {
            tracing::info!(auroc = ?r.auroc, aupr = ?r.aupr, accuracy = r.accuracy, "evaluated");
        }),
        Stage::Predict => run_predict(cfg, precision, checkpoint).map(|p| {
            tracing::info!(path = %p.display(), "predictions written");
        }),
        Stage::Ablate => run_ablate(cfg, precision).map(|rows| {
            tracing::info!(rows = rows.len(), "ablation finished");
        }),
    }
}

/// Counts of windows per split and label, for diagnostics.
pub fn split_counts(prepared: &[PreparedWindow]) -> BTreeMap<(&'static str, u8), usize> {
    let mut out = BTreeMap::new();
    for w in prepared {
        *out.entry((w.split.name(), w.window.label)).or_insert(0) += 1;
    }
    out
}
