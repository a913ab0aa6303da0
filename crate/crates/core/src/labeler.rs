//! Context-anomaly labelling: monotonic trend, sudden spike, sudden shift,
//! volatility change and out-of-range points.
//!
//! Each detector is a deterministic function of the series. A series too
//! short for a detector is "not applicable" and never counts as anomalous.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::series::{minmax_scale, TimeSeries};
use crate::stats::{levene_test, linreg_slope_test, two_sample_t_test, TestResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AnomalyKind {
    MonotonicTrend,
    SuddenSpike,
    SuddenShift,
    VolatilityChange,
    PointRange,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 5] = [
        AnomalyKind::MonotonicTrend,
        AnomalyKind::SuddenSpike,
        AnomalyKind::SuddenShift,
        AnomalyKind::VolatilityChange,
        AnomalyKind::PointRange,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::MonotonicTrend => "MonotonicTrend",
            AnomalyKind::SuddenSpike => "SuddenSpike",
            AnomalyKind::SuddenShift => "SuddenShift",
            AnomalyKind::VolatilityChange => "VolatilityChange",
            AnomalyKind::PointRange => "PointRange",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyKind {
    type Err = SpearError;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SpearError::InvalidInput(format!("unknown anomaly kind `{s}`")))
    }
}

/// Acceptable value range for point anomalies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueRange {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelerConfig {
    pub monotonic_trend: bool,
    pub sudden_spike: bool,
    pub sudden_shift: bool,
    pub volatility_change: bool,
    /// Point anomalies are only labelled when a range is declared.
    pub point_range: Option<ValueRange>,
    /// Apply the slope threshold to min-max scaled values instead of raw ones.
    pub trend_on_scaled: bool,
    pub slope_threshold: f64,
    pub alpha: f64,
    pub spike_sigmas: f64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            monotonic_trend: true,
            sudden_spike: true,
            sudden_shift: true,
            volatility_change: true,
            point_range: None,
            trend_on_scaled: false,
            slope_threshold: 0.01,
            alpha: 0.05,
            spike_sigmas: 3.0,
        }
    }
}

impl LabelerConfig {
    /// Every detector switched off.
    pub fn disabled() -> Self {
        LabelerConfig {
            monotonic_trend: false,
            sudden_spike: false,
            sudden_shift: false,
            volatility_change: false,
            point_range: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.point_range {
            if !(r.low <= r.high) {
                return Err(SpearError::Config(format!(
                    "labeler.point_range: low {} exceeds high {}",
                    r.low, r.high
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(SpearError::Config(format!("labeler.alpha must be in (0,1), got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Union of the detectors that fired on one series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnomalyLabelSet {
    pub series_id: String,
    pub kinds: BTreeSet<AnomalyKind>,
    pub point_indices: Vec<usize>,
}

impl AnomalyLabelSet {
    pub fn is_anomalous(&self) -> bool {
        !self.kinds.is_empty()
    }
}

pub fn detect_monotonic_trend(values: &[f64], config: &LabelerConfig) -> Option<AnomalyKind> {
    let scaled;
    let input = if config.trend_on_scaled {
        let series = TimeSeries::from_values("trend", values.to_vec()).ok()?;
        scaled = minmax_scale(&series).ok()?.0;
        &scaled[..]
    } else {
        values
    };
    match linreg_slope_test(input) {
        Ok(fit) => (fit.slope.abs() > config.slope_threshold && fit.p_value < config.alpha)
            .then_some(AnomalyKind::MonotonicTrend),
        Err(e) => {
            tracing::debug!("monotonic trend not applicable: {e}");
            None
        }
    }
}

/// Flags any absolute first difference above mean + k·std of all of them.
pub fn detect_sudden_spike(values: &[f64], config: &LabelerConfig) -> Option<AnomalyKind> {
    if values.len() < 3 {
        tracing::debug!("sudden spike not applicable to {} points", values.len());
        return None;
    }
    let diffs: Vec<f64> = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let n = diffs.len() as f64;
    let mu = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / (n - 1.0);
    let theta = mu + config.spike_sigmas * var.sqrt();
    diffs
        .iter()
        .any(|&d| d > theta)
        .then_some(AnomalyKind::SuddenSpike)
}

/// Scans split points k = 2..=T-2 (size of the leading segment) and returns
/// the first k whose test rejects at `alpha`.
fn first_significant_split(
    values: &[f64],
    alpha: f64,
    test: fn(&[f64], &[f64]) -> Result<TestResult>,
) -> Option<(usize, TestResult)> {
    let n = values.len();
    if n < 4 {
        return None;
    }
    (2..=n - 2).find_map(|k| {
        let (a, b) = values.split_at(k);
        test(a, b).ok().filter(|r| r.p_value < alpha).map(|r| (k, r))
    })
}

pub fn sudden_shift_split(values: &[f64], config: &LabelerConfig) -> Option<(usize, TestResult)> {
    first_significant_split(values, config.alpha, two_sample_t_test)
}

pub fn volatility_change_split(values: &[f64], config: &LabelerConfig) -> Option<(usize, TestResult)> {
    first_significant_split(values, config.alpha, levene_test)
}

pub fn detect_sudden_shift(values: &[f64], config: &LabelerConfig) -> Option<AnomalyKind> {
    sudden_shift_split(values, config).map(|_| AnomalyKind::SuddenShift)
}

pub fn detect_volatility_change(values: &[f64], config: &LabelerConfig) -> Option<AnomalyKind> {
    volatility_change_split(values, config).map(|_| AnomalyKind::VolatilityChange)
}

/// Indices strictly outside `[low, high]`.
pub fn detect_point_anomalies(values: &[f64], low: f64, high: f64) -> Result<Vec<usize>> {
    if !(low <= high) {
        return Err(SpearError::InvalidInput(format!(
            "point range low {low} exceeds high {high}"
        )));
    }
    Ok(values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < low || v > high)
        .map(|(i, _)| i)
        .collect())
}

/// Runs every enabled detector independently and unions the results.
pub fn label_series(series: &TimeSeries, config: &LabelerConfig) -> AnomalyLabelSet {
    let values = &series.values;
    let mut kinds = BTreeSet::new();
    let detectors: [(bool, fn(&[f64], &LabelerConfig) -> Option<AnomalyKind>); 4] = [
        (config.monotonic_trend, detect_monotonic_trend),
        (config.sudden_spike, detect_sudden_spike),
        (config.sudden_shift, detect_sudden_shift),
        (config.volatility_change, detect_volatility_change),
    ];
    for (enabled, detect) in detectors {
        if enabled {
            kinds.extend(detect(values, config));
        }
    }
    let mut point_indices = Vec::new();
    if let Some(range) = config.point_range {
        if let Ok(idx) = detect_point_anomalies(values, range.low, range.high) {
            point_indices = idx;
        }
        if !point_indices.is_empty() {
            kinds.insert(AnomalyKind::PointRange);
        }
    }
    AnomalyLabelSet {
        series_id: series.id.clone(),
        kinds,
        point_indices,
    }
}

/// Per-kind counts over a labelled corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub n_series: usize,
    pub n_anomalous: usize,
    pub counts: BTreeMap<String, usize>,
}

pub fn summarize(labels: &[AnomalyLabelSet]) -> LabelSummary {
    let mut counts: BTreeMap<String, usize> =
        AnomalyKind::ALL.iter().map(|k| (k.name().to_string(), 0)).collect();
    for set in labels {
        for kind in &set.kinds {
            *counts.entry(kind.name().to_string()).or_default() += 1;
        }
    }
    LabelSummary {
        n_series: labels.len(),
        n_anomalous: labels.iter().filter(|l| l.is_anomalous()).count(),
        counts,
    }
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items
        .into_iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("|")
}

/// Writes `series_id,is_anomalous,kinds,point_indices`.
pub fn write_labels_csv(path: impl AsRef<Path>, labels: &[AnomalyLabelSet]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| SpearError::csv(path, e))?;
    w.write_record(["series_id", "is_anomalous", "kinds", "point_indices"])
        .map_err(|e| SpearError::csv(path, e))?;
    for set in labels {
        w.write_record([
            set.series_id.clone(),
            u8::from(set.is_anomalous()).to_string(),
            join(&set.kinds),
            join(&set.point_indices),
        ])
        .map_err(|e| SpearError::csv(path, e))?;
    }
    w.flush().map_err(|e| SpearError::io(path, e))
}
