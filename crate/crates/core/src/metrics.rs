//! Binary-classification metrics: thresholded counts, ranking areas and
//! curve export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpearError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Evaluation summary. Field order is the JSON key order; ranking metrics
/// that are undefined for the given labels serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub threshold: f64,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
}

/// ROC points `(fpr, tpr)` and PR points `(recall, precision)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curves {
    pub roc: Vec<(f64, f64)>,
    pub pr: Vec<(f64, f64)>,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(SpearError::InvalidInput(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(SpearError::InvalidInput(format!("label {l} is not binary")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(SpearError::NonFinite { index: i });
    }
    Ok(())
}

/// Counts with the convention that `score >= threshold` predicts positive.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, precision, recall and F1; empty denominators give 0.
pub fn point_metrics(c: &Confusion) -> Result<PointMetrics> {
    if c.total() == 0 {
        return Err(SpearError::InvalidInput("no samples to score".into()));
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Ok(PointMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision,
        recall,
        f1: f1_score(precision, recall),
    })
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Indices sorted by descending score, grouped into runs of equal scores.
fn descending_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

fn class_sizes(labels: &[u8]) -> (u64, u64) {
    let pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    (pos, labels.len() as u64 - pos)
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from tie-grouped ranks in `O(n log n)`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let (n_pos, n_neg) = class_sizes(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(SpearError::NotApplicable(
            "AUROC needs at least one positive and one negative label".into(),
        ));
    }
    // Walk tie groups from the lowest score up: each positive beats every
    // negative already passed and ties with the negatives in its own group.
    let mut negatives_below = 0u128;
    let mut twice_wins = 0u128;
    for g in descending_groups(scores).iter().rev() {
        let pos = g.iter().filter(|&&i| labels[i] == 1).count() as u128;
        let neg = g.len() as u128 - pos;
        twice_wins += pos * (2 * negatives_below + neg);
        negatives_below += neg;
    }
    Ok(twice_wins as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Average precision: each tie group contributes its precision times its
/// share of the positives.
pub fn aupr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check(scores, labels)?;
    let (n_pos, _) = class_sizes(labels);
    if n_pos == 0 {
        return Err(SpearError::NotApplicable("AUPR needs at least one positive label".into()));
    }
    let (mut tp, mut seen) = (0u64, 0u64);
    let mut ap = 0.0;
    for g in descending_groups(scores) {
        let pos = g.iter().filter(|&&i| labels[i] == 1).count() as u64;
        tp += pos;
        seen += g.len() as u64;
        if pos > 0 {
            ap += (tp as f64 / seen as f64) * (pos as f64 / n_pos as f64);
        }
    }
    Ok(ap)
}

/// ROC curve from (0,0) to (1,1), one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    check(scores, labels)?;
    let (n_pos, n_neg) = class_sizes(labels);
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    for g in descending_groups(scores) {
        let pos = g.iter().filter(|&&i| labels[i] == 1).count() as u64;
        tp += pos;
        fp += g.len() as u64 - pos;
        out.push((
            if n_neg == 0 { 1.0 } else { fp as f64 / n_neg as f64 },
            if n_pos == 0 { 1.0 } else { tp as f64 / n_pos as f64 },
        ));
    }
    if out.last() != Some(&(1.0, 1.0)) {
        out.push((1.0, 1.0));
    }
    Ok(out)
}

/// Precision-recall points, starting at recall 0 with precision 1.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    check(scores, labels)?;
    let (n_pos, _) = class_sizes(labels);
    let mut out = vec![(0.0, 1.0)];
    let (mut tp, mut seen) = (0u64, 0u64);
    for g in descending_groups(scores) {
        tp += g.iter().filter(|&&i| labels[i] == 1).count() as u64;
        seen += g.len() as u64;
        out.push((ratio(tp, n_pos), tp as f64 / seen as f64));
    }
    Ok(out)
}

/// Full report plus curves at the given threshold.
pub fn evaluate(scores: &[f64], labels: &[u8], threshold: f64) -> Result<(MetricsReport, Curves)> {
    let c = confusion(scores, labels, threshold)?;
    let p = point_metrics(&c)?;
    let report = MetricsReport {
        n: c.total(),
        threshold,
        confusion: c,
        accuracy: p.accuracy,
        precision: p.precision,
        recall: p.recall,
        f1: p.f1,
        auroc: auroc(scores, labels).ok(),
        aupr: aupr(scores, labels).ok(),
    };
    let curves = Curves {
        roc: roc_curve(scores, labels)?,
        pr: pr_curve(scores, labels)?,
    };
    Ok((report, curves))
}

pub fn curve_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("x,y\n");
    for (x, y) in points {
        let _ = writeln!(s, "{x},{y}");
    }
    s
}

/// A minimal standalone SVG with the curve as one polyline on the unit square.
pub fn curve_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 40.0;
    let mut poly = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            poly.push(' ');
        }
        let _ = write!(poly, "{:.2},{:.2}", PAD + x * SIZE, PAD + (1.0 - y) * SIZE);
    }
    let escape = |t: &str| t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let total = SIZE + 2.0 * PAD;
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{t}\" height=\"{t}\" viewBox=\"0 0 {t} {t}\">\n",
            "<title>{title}</title>\n",
            "<rect x=\"{p}\" y=\"{p}\" width=\"{s}\" height=\"{s}\" fill=\"none\" stroke=\"#888\"/>\n",
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{poly}\"/>\n",
            "<text x=\"{cx}\" y=\"{bottom}\" text-anchor=\"middle\" font-size=\"14\">{xl}</text>\n",
            "<text x=\"14\" y=\"{cx}\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 14 {cx})\">{yl}</text>\n",
            "<text x=\"{cx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
            "</svg>\n"
        ),
        t = total,
        p = PAD,
        s = SIZE,
        cx = total / 2.0,
        bottom = total - 8.0,
        poly = poly,
        title = escape(title),
        xl = escape(x_label),
        yl = escape(y_label),
    )
}

/// Writes `metrics.json`, `roc.csv`, `pr.csv`, `roc.svg` and `pr.svg` into `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport, curves: &Curves) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SpearError::io(dir, e))?;
    let files = [
        ("metrics.json", serde_json::to_string_pretty(report)? + "\n"),
        ("roc.csv", curve_csv(&curves.roc)),
        ("pr.csv", curve_csv(&curves.pr)),
        ("roc.svg", curve_svg(&curves.roc, "ROC", "false positive rate", "true positive rate")),
        ("pr.svg", curve_svg(&curves.pr, "Precision-Recall", "recall", "precision")),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| SpearError::io(&path, e))?;
    }
    Ok(())
}
