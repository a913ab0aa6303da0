//! Seeded synthetic corpus: Gaussian noise around a constant level, with
//! one injected anomaly of a known kind in a fixed fraction of series.
//!
//! Labels come from the injection, never from the detectors, so detector
//! power can be measured against ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};
use crate::labeler::{
    detect_monotonic_trend, detect_point_anomalies, detect_sudden_shift, detect_sudden_spike,
    detect_volatility_change, AnomalyKind, LabelerConfig, ValueRange,
};
use crate::rng::{derive_seed, item_seed, rng_from_seed, SpearRng, Stream};
use crate::series::TimeSeries;

/// Relative frequency of each anomaly kind among anomalous series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KindMix {
    pub monotonic_trend: f64,
    pub sudden_spike: f64,
    pub sudden_shift: f64,
    pub volatility_change: f64,
    pub point_range: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix {
            monotonic_trend: 0.2,
            sudden_spike: 0.2,
            sudden_shift: 0.2,
            volatility_change: 0.2,
            point_range: 0.2,
        }
    }
}

impl KindMix {
    pub fn weights(&self) -> [(AnomalyKind, f64); 5] {
        [
            (AnomalyKind::MonotonicTrend, self.monotonic_trend),
            (AnomalyKind::SuddenSpike, self.sudden_spike),
            (AnomalyKind::SuddenShift, self.sudden_shift),
            (AnomalyKind::VolatilityChange, self.volatility_change),
            (AnomalyKind::PointRange, self.point_range),
        ]
    }
}

/// Magnitudes used by [`inject`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectParams {
    pub base_level: f64,
    pub trend_slope: f64,
    pub spike_magnitude: f64,
    pub shift_magnitude: f64,
    pub volatility_ratio: f64,
    /// Distance a point anomaly is pushed away from the base level.
    pub point_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_series: usize,
    pub series_len: usize,
    pub anomaly_fraction: f64,
    pub mix: KindMix,
    pub noise_sigma: f64,
    pub base_level: f64,
    pub trend_slope: f64,
    pub spike_magnitude: f64,
    pub shift_magnitude: f64,
    pub volatility_ratio: f64,
    pub point_magnitude: f64,
    /// Half-width of the declared acceptable range around the base level.
    pub range_half_width: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_series: 500,
            series_len: 100,
            anomaly_fraction: 0.2,
            mix: KindMix::default(),
            noise_sigma: 1.0,
            base_level: 0.0,
            trend_slope: 0.05,
            spike_magnitude: 8.0,
            shift_magnitude: 4.0,
            volatility_ratio: 5.0,
            point_magnitude: 10.0,
            range_half_width: 5.0,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(SpearError::Config(msg));
        if self.series_len < 4 {
            return fail(format!("data.series_len must be >= 4, got {}", self.series_len));
        }
        if !(0.0..=1.0).contains(&self.anomaly_fraction) {
            return fail(format!("data.anomaly_fraction must lie in [0, 1], got {}", self.anomaly_fraction));
        }
        let weights = self.mix.weights();
        if weights.iter().any(|(_, w)| !(*w >= 0.0)) {
            return fail("data.mix weights must be non-negative".into());
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return fail(format!("data.mix weights must sum to 1, got {total}"));
        }
        for (name, v) in [
            ("trend_slope", self.trend_slope),
            ("spike_magnitude", self.spike_magnitude),
            ("shift_magnitude", self.shift_magnitude),
            ("volatility_ratio", self.volatility_ratio),
            ("point_magnitude", self.point_magnitude),
            ("range_half_width", self.range_half_width),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("data.{name} must be > 0, got {v}"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite() && self.base_level.is_finite()) {
            return fail("data.noise_sigma must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn inject_params(&self) -> InjectParams {
        InjectParams {
            base_level: self.base_level,
            trend_slope: self.trend_slope,
            spike_magnitude: self.spike_magnitude,
            shift_magnitude: self.shift_magnitude,
            volatility_ratio: self.volatility_ratio,
            point_magnitude: self.point_magnitude,
        }
    }

    /// The declared acceptable range used for point anomalies.
    pub fn value_range(&self) -> ValueRange {
        ValueRange {
            low: self.base_level - self.range_half_width,
            high: self.base_level + self.range_half_width,
        }
    }

    pub fn n_anomalous(&self) -> usize {
        (self.anomaly_fraction * self.n_series as f64).round() as usize
    }
}

/// Constant level plus i.i.d. Gaussian noise, timestamps `0..T`.
pub fn gen_normal(rng: &mut SpearRng, id: &str, len: usize, base_level: f64, noise_sigma: f64) -> Result<TimeSeries> {
    if len == 0 {
        return Err(SpearError::InvalidInput("series length must be >= 1".into()));
    }
    let normal = Normal::new(0.0, noise_sigma)
        .map_err(|e| SpearError::Config(format!("noise_sigma {noise_sigma}: {e}")))?;
    let values = (0..len).map(|_| base_level + normal.sample(rng)).collect();
    TimeSeries::from_values(id, values)
}

/// Split point for shift and volatility anomalies: uniform over the middle
/// half of the series, kept at least two points from either end.
fn draw_split(rng: &mut SpearRng, len: usize) -> usize {
    let lo = (len / 4).max(2);
    let hi = (3 * len / 4).min(len - 2).max(lo);
    rng.gen_range(lo..=hi)
}

/// Applies one anomaly in place and marks the affected observations in the
/// series labels.
pub fn inject(series: &TimeSeries, kind: AnomalyKind, rng: &mut SpearRng, p: &InjectParams) -> Result<TimeSeries> {
    let len = series.len();
    let min_len = match kind {
        AnomalyKind::SuddenShift | AnomalyKind::VolatilityChange => 4,
        AnomalyKind::SuddenSpike => 3,
        AnomalyKind::MonotonicTrend | AnomalyKind::PointRange => 1,
    };
    if len < min_len {
        return Err(SpearError::InvalidInput(format!(
            "{kind} injection needs at least {min_len} points, series {} has {len}",
            series.id
        )));
    }
    let mut out = series.clone();
    let mut labels = out.labels.take().unwrap_or_else(|| vec![0; len]);
    let v = &mut out.values;
    match kind {
        AnomalyKind::MonotonicTrend => {
            for (t, x) in v.iter_mut().enumerate() {
                *x += p.trend_slope * (t + 1) as f64;
            }
            labels.iter_mut().for_each(|l| *l = 1);
        }
        AnomalyKind::SuddenSpike => {
            let j = rng.gen_range(1..len - 1);
            v[j] += p.spike_magnitude;
            labels[j] = 1;
        }
        AnomalyKind::SuddenShift => {
            let s = draw_split(rng, len);
            v[s..].iter_mut().for_each(|x| *x += p.shift_magnitude);
            labels[s..].iter_mut().for_each(|l| *l = 1);
        }
        AnomalyKind::VolatilityChange => {
            let s = draw_split(rng, len);
            v[s..]
                .iter_mut()
                .for_each(|x| *x = p.base_level + (*x - p.base_level) * p.volatility_ratio);
            labels[s..].iter_mut().for_each(|l| *l = 1);
        }
        AnomalyKind::PointRange => {
            let j = rng.gen_range(0..len);
            let side = if v[j] >= p.base_level { 1.0 } else { -1.0 };
            v[j] += side * p.point_magnitude;
            labels[j] = 1;
        }
    }
    out.labels = Some(labels);
    out.validate()?;
    Ok(out)
}

/// Ground truth for one generated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub series_id: String,
    pub label: u8,
    pub kind: Option<AnomalyKind>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    /// Series with per-observation labels marking the injected region.
    pub series: Vec<TimeSeries>,
    pub truth: Vec<GroundTruth>,
}

/// Splits `total` across the mix by largest remainder so the per-kind
/// counts follow the weights as closely as integers allow.
fn allocate_kinds(total: usize, mix: &KindMix) -> Vec<AnomalyKind> {
    let weights = mix.weights();
    let exact: Vec<f64> = weights.iter().map(|(_, w)| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = total - counts.iter().sum::<usize>();
    for i in order {
        if missing == 0 {
            break;
        }
        if weights[i].1 > 0.0 {
            counts[i] += 1;
            missing -= 1;
        }
    }
    weights
        .iter()
        .zip(counts)
        .flat_map(|((k, _), c)| std::iter::repeat_n(*k, c))
        .collect()
}

/// Generates the corpus. Exactly `round(fraction * n)` series are anomalous;
/// which ones and their kinds are drawn from the data stream, and every
/// series has its own derived RNG.
pub fn gen_dataset(cfg: &GenConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let data_seed = derive_seed(cfg.seed, Stream::Data);
    let mut rng = rng_from_seed(data_seed);
    let n_anom = cfg.n_anomalous();
    let mut kinds = allocate_kinds(n_anom, &cfg.mix);
    kinds.shuffle(&mut rng);
    let mut chosen: Vec<usize> = (0..cfg.n_series).collect();
    chosen.shuffle(&mut rng);
    let mut assignment: BTreeMap<usize, AnomalyKind> = BTreeMap::new();
    for (&idx, &kind) in chosen.iter().zip(&kinds) {
        assignment.insert(idx, kind);
    }

    let params = cfg.inject_params();
    let width = cfg.n_series.saturating_sub(1).to_string().len().max(4);
    let mut series = Vec::with_capacity(cfg.n_series);
    let mut truth = Vec::with_capacity(cfg.n_series);
    for i in 0..cfg.n_series {
        let id = format!("s{i:0width$}");
        let mut r = rng_from_seed(item_seed(data_seed, i as u64));
        let normal = gen_normal(&mut r, &id, cfg.series_len, cfg.base_level, cfg.noise_sigma)?
            .with_labels(vec![0; cfg.series_len])?;
        let kind = assignment.get(&i).copied();
        let s = match kind {
            Some(k) => inject(&normal, k, &mut r, &params)?,
            None => normal,
        };
        truth.push(GroundTruth {
            series_id: id,
            label: u8::from(kind.is_some()),
            kind,
        });
        series.push(s);
    }
    Ok(SynthDataset { series, truth })
}

/// Writes `series_id,label,kind` with `none` for normal series.
pub fn write_truth_csv(path: impl AsRef<Path>, truth: &[GroundTruth]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| SpearError::csv(path, e))?;
    w.write_record(["series_id", "label", "kind"]).map_err(|e| SpearError::csv(path, e))?;
    for t in truth {
        let kind = t.kind.map_or("none", AnomalyKind::name);
        w.write_record([t.series_id.as_str(), &t.label.to_string(), kind])
            .map_err(|e| SpearError::csv(path, e))?;
    }
    w.flush().map_err(|e| SpearError::io(path, e))
}

/// Detection rate of one detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorPower {
    pub kind: AnomalyKind,
    /// Fraction of series injected with `kind` that the matching detector flags.
    pub tpr: f64,
    /// Fraction of pure-noise series the same detector flags.
    pub fpr: f64,
}

/// Runs `detector` for `kind` on one series.
pub fn detector_fires(kind: AnomalyKind, values: &[f64], cfg: &LabelerConfig) -> Result<bool> {
    Ok(match kind {
        AnomalyKind::MonotonicTrend => detect_monotonic_trend(values, cfg).is_some(),
        AnomalyKind::SuddenSpike => detect_sudden_spike(values, cfg).is_some(),
        AnomalyKind::SuddenShift => detect_sudden_shift(values, cfg).is_some(),
        AnomalyKind::VolatilityChange => detect_volatility_change(values, cfg).is_some(),
        AnomalyKind::PointRange => match cfg.point_range {
            Some(r) => !detect_point_anomalies(values, r.low, r.high)?.is_empty(),
            None => false,
        },
    })
}

/// Injects each kind into `n_per_kind` fresh noise series and measures how
/// often its own detector fires; the same detectors are also run on
/// `n_per_kind` pure-noise series.
pub fn detector_power(cfg: &GenConfig, labeler: &LabelerConfig, n_per_kind: usize) -> Result<Vec<DetectorPower>> {
    cfg.validate()?;
    let mut labeler = labeler.clone();
    if labeler.point_range.is_none() {
        labeler.point_range = Some(cfg.value_range());
    }
    let params = cfg.inject_params();
    let seed = derive_seed(cfg.seed, Stream::Data);
    let noise: Vec<TimeSeries> = (0..n_per_kind)
        .map(|i| {
            let mut r = rng_from_seed(item_seed(seed ^ 0x9e37_79b9_7f4a_7c15, i as u64));
            gen_normal(&mut r, &format!("noise{i}"), cfg.series_len, cfg.base_level, cfg.noise_sigma)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k_idx, kind) in AnomalyKind::ALL.into_iter().enumerate() {
        let mut hits = 0usize;
        for i in 0..n_per_kind {
            let index = (k_idx * n_per_kind + i) as u64;
            let mut r = rng_from_seed(item_seed(seed, index));
            let base = gen_normal(&mut r, &format!("{kind}{i}"), cfg.series_len, cfg.base_level, cfg.noise_sigma)?;
            let s = inject(&base, kind, &mut r, &params)?;
            hits += usize::from(detector_fires(kind, &s.values, &labeler)?);
        }
        let mut false_hits = 0usize;
        for s in &noise {
            false_hits += usize::from(detector_fires(kind, &s.values, &labeler)?);
        }
        let denom = n_per_kind.max(1) as f64;
        out.push(DetectorPower {
            kind,
            tpr: hits as f64 / denom,
            fpr: false_hits as f64 / denom,
        });
    }
    Ok(out)
}
