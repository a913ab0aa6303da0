//! Univariate series: scaling, quantization, windowing and padding.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};

/// A univariate series with optional per-observation anomaly labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub id: String,
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl TimeSeries {
    pub fn new(id: impl Into<String>, timestamps: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let series = TimeSeries {
            id: id.into(),
            timestamps,
            values,
            labels: None,
        };
        series.validate()?;
        Ok(series)
    }

    /// Series indexed by step `0..values.len()`.
    pub fn from_values(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let timestamps = (0..values.len()).map(|i| i as f64).collect();
        Self::new(id, timestamps, values)
    }

    pub fn with_labels(mut self, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != self.values.len() {
            return Err(SpearError::InvalidInput(format!(
                "series {}: {} labels for {} values",
                self.id,
                labels.len(),
                self.values.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l > 1) {
            return Err(SpearError::InvalidInput(format!(
                "series {}: label at index {i} is not binary",
                self.id
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// 1 if any observation is labelled anomalous.
    pub fn label(&self) -> Option<u8> {
        self.labels
            .as_ref()
            .map(|l| u8::from(l.contains(&1)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(SpearError::InvalidInput(format!("series {} is empty", self.id)));
        }
        if self.values.len() != self.timestamps.len() {
            return Err(SpearError::InvalidInput(format!(
                "series {}: {} timestamps for {} values",
                self.id,
                self.timestamps.len(),
                self.values.len()
            )));
        }
        check_finite(&self.values)?;
        if let Some(i) = self
            .timestamps
            .windows(2)
            .position(|w| !(w[1] > w[0]) || !w[1].is_finite())
        {
            return Err(SpearError::InvalidInput(format!(
                "series {}: timestamps not strictly increasing at index {}",
                self.id,
                i + 1
            )));
        }
        Ok(())
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(SpearError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Min-max scaling parameters of one source stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleParams {
    pub min: f64,
    pub max: f64,
}

impl ScaleParams {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min > max {
            return Err(SpearError::InvalidInput(format!(
                "invalid scale range [{min}, {max}]"
            )));
        }
        Ok(ScaleParams { min, max })
    }

    /// Fits min/max over `values`.
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(SpearError::InvalidInput("cannot fit scale on no values".into()));
        }
        check_finite(values)?;
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Ok(ScaleParams { min, max })
    }

    /// Maps a value into the unit interval. Values outside the fitted range
    /// fall outside `[0, 1]`; a degenerate range maps everything to 0.
    pub fn apply(&self, value: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            (value - self.min) / range
        } else {
            0.0
        }
    }

    pub fn invert(&self, unit: f64) -> f64 {
        self.min + (self.max - self.min) * unit
    }
}

/// Scales a series into `[0, 1]` by its own min and max.
pub fn minmax_scale(series: &TimeSeries) -> Result<(Vec<f64>, ScaleParams)> {
    let params = ScaleParams::fit(&series.values)?;
    Ok((series.values.iter().map(|&v| params.apply(v)).collect(), params))
}

fn check_bins(n_bins: u32) -> Result<()> {
    if n_bins < 2 {
        return Err(SpearError::Config(format!("n_bins must be >= 2, got {n_bins}")));
    }
    Ok(())
}

/// Uniform-bin quantization of one scaled value; out-of-range input is clamped.
pub fn quantize_value(value: f64, n_bins: u32) -> u32 {
    let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
    ((v * f64::from(n_bins)).floor() as u32).min(n_bins - 1)
}

pub fn quantize(scaled: &[f64], n_bins: u32) -> Result<Vec<u32>> {
    check_bins(n_bins)?;
    Ok(scaled.iter().map(|&v| quantize_value(v, n_bins)).collect())
}

/// Center of a bin, mapped back through the inverse scaling.
pub fn dequantize(token: u32, n_bins: u32, scale: &ScaleParams) -> Result<f64> {
    check_bins(n_bins)?;
    if token >= n_bins {
        return Err(SpearError::InvalidInput(format!(
            "token {token} out of range for {n_bins} bins"
        )));
    }
    Ok(scale.invert((f64::from(token) + 0.5) / f64::from(n_bins)))
}

/// Sliding-window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    pub size: usize,
    pub stride: usize,
    /// Adds an end-aligned window when the stride grid misses the tail, and
    /// keeps series shorter than `size` as a single short window.
    pub include_tail: bool,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            size: 100,
            stride: 10,
            include_tail: false,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.stride == 0 {
            return Err(SpearError::Config(format!(
                "window size and stride must be >= 1, got size {} stride {}",
                self.size, self.stride
            )));
        }
        Ok(())
    }

    /// Start offsets of the windows over a series of length `len`.
    pub fn offsets(&self, len: usize) -> Vec<usize> {
        if len < self.size {
            return if self.include_tail && len > 0 { vec![0] } else { Vec::new() };
        }
        let mut offsets: Vec<usize> = (0..=(len - self.size) / self.stride)
            .map(|i| i * self.stride)
            .collect();
        let last = len - self.size;
        if self.include_tail && offsets.last() != Some(&last) {
            offsets.push(last);
        }
        offsets
    }
}

/// Cuts a series into windows named `<id>@<offset>`.
pub fn window(series: &TimeSeries, spec: &WindowSpec) -> Result<Vec<TimeSeries>> {
    spec.validate()?;
    Ok(spec
        .offsets(series.len())
        .into_iter()
        .map(|offset| {
            let end = (offset + spec.size).min(series.len());
            TimeSeries {
                id: format!("{}@{offset}", series.id),
                timestamps: series.timestamps[offset..end].to_vec(),
                values: series.values[offset..end].to_vec(),
                labels: series.labels.as_ref().map(|l| l[offset..end].to_vec()),
            }
        })
        .collect())
}

/// Truncates to the first `max_len` tokens or pads the end with masked bin-0
/// tokens.
pub fn fit_to_length(tokens: &[u32], max_len: usize) -> (Vec<u32>, Vec<bool>) {
    let keep = tokens.len().min(max_len);
    let mut out = tokens[..keep].to_vec();
    let mut mask = vec![true; keep];
    out.resize(max_len, 0);
    mask.resize(max_len, false);
    (out, mask)
}

/// Discrete model input for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedWindow {
    pub tokens: Vec<u32>,
    pub n_bins: u32,
    pub mask: Vec<bool>,
    pub scale: ScaleParams,
    pub label: u8,
    pub source_id: String,
}

impl QuantizedWindow {
    pub fn new(
        tokens: Vec<u32>,
        n_bins: u32,
        mask: Vec<bool>,
        scale: ScaleParams,
        label: u8,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        check_bins(n_bins)?;
        if tokens.len() != mask.len() {
            return Err(SpearError::InvalidInput(format!(
                "{} tokens but {} mask entries",
                tokens.len(),
                mask.len()
            )));
        }
        if let Some(t) = tokens.iter().find(|&&t| t >= n_bins) {
            return Err(SpearError::InvalidInput(format!(
                "token {t} out of range for {n_bins} bins"
            )));
        }
        if !mask.iter().any(|&m| m) {
            return Err(SpearError::InvalidInput("window has no real positions".into()));
        }
        if label > 1 {
            return Err(SpearError::InvalidInput(format!("label {label} is not binary")));
        }
        Ok(QuantizedWindow {
            tokens,
            n_bins,
            mask,
            scale,
            label,
            source_id: source_id.into(),
        })
    }

    /// Scales, quantizes and fits raw values to `max_len`.
    pub fn from_values(
        values: &[f64],
        scale: ScaleParams,
        n_bins: u32,
        max_len: usize,
        label: u8,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        check_finite(values)?;
        let scaled: Vec<f64> = values.iter().map(|&v| scale.apply(v)).collect();
        Self::from_scaled(&scaled, scale, n_bins, max_len, label, source_id)
    }

    pub fn from_scaled(
        scaled: &[f64],
        scale: ScaleParams,
        n_bins: u32,
        max_len: usize,
        label: u8,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let tokens = quantize(scaled, n_bins)?;
        let (tokens, mask) = fit_to_length(&tokens, max_len);
        Self::new(tokens, n_bins, mask, scale, label, source_id)
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Deserialize)]
struct SeriesRow {
    series_id: String,
    t: f64,
    value: f64,
    #[serde(default)]
    label: Option<u8>,
}

/// Reads `series_id,t,value[,label]` rows, grouping by id in first-seen order.
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<Vec<TimeSeries>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| SpearError::csv(path, e))?;
    let headers = reader.headers().map_err(|e| SpearError::csv(path, e))?.clone();
    for required in ["series_id", "t", "value"] {
        if !headers.iter().any(|h| h == required) {
            return Err(SpearError::InvalidInput(format!(
                "{}: missing column `{required}`",
                path.display()
            )));
        }
    }
    let has_label = headers.iter().any(|h| h == "label");

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, (Vec<f64>, Vec<f64>, Vec<u8>)> = HashMap::new();
    for (line, row) in reader.deserialize::<SeriesRow>().enumerate() {
        let row = row.map_err(|e| SpearError::csv(path, e))?;
        if !row.value.is_finite() || !row.t.is_finite() {
            return Err(SpearError::InvalidInput(format!(
                "{}: non-finite value on data row {}",
                path.display(),
                line + 1
            )));
        }
        let entry = grouped.entry(row.series_id.clone()).or_insert_with(|| {
            order.push(row.series_id.clone());
            Default::default()
        });
        entry.0.push(row.t);
        entry.1.push(row.value);
        if has_label {
            entry.2.push(row.label.unwrap_or(0));
        }
    }

    order
        .into_iter()
        .map(|id| {
            let (t, v, l) = grouped.remove(&id).unwrap_or_default();
            let series = TimeSeries::new(id, t, v)?;
            if has_label {
                series.with_labels(l)
            } else {
                Ok(series)
            }
        })
        .collect()
}

pub fn write_series_csv(path: impl AsRef<Path>, series: &[TimeSeries]) -> Result<()> {
    let path = path.as_ref();
    let with_labels = series.iter().any(|s| s.labels.is_some());
    let mut writer = csv::Writer::from_path(path).map_err(|e| SpearError::csv(path, e))?;
    let header: &[&str] = if with_labels {
        &["series_id", "t", "value", "label"]
    } else {
        &["series_id", "t", "value"]
    };
    writer.write_record(header).map_err(|e| SpearError::csv(path, e))?;
    for s in series {
        for i in 0..s.len() {
            let mut record = vec![s.id.clone(), s.timestamps[i].to_string(), s.values[i].to_string()];
            if with_labels {
                let label = s.labels.as_ref().map_or(0, |l| l[i]);
                record.push(label.to_string());
            }
            writer.write_record(&record).map_err(|e| SpearError::csv(path, e))?;
        }
    }
    writer.flush().map_err(|e| SpearError::io(path, e))?;
    Ok(())
}
