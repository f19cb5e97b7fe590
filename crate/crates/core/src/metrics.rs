//! Confusion-matrix metrics, ROC area and precision-recall area.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("predictions and labels have different lengths ({predictions} vs {labels})")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("both classes must be present")]
    SingleClass,
    #[error("at least one positive label required")]
    NoPositives,
    #[error("cannot compute metrics over zero instances")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Marks metrics whose denominator was 0/0; the value is reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricFlags {
    pub sensitivity_undefined: bool,
    pub specificity_undefined: bool,
    pub precision_undefined: bool,
    pub f_measure_undefined: bool,
}

/// The evaluation metric set. Scalar components come from the confusion
/// counts; the two areas are filled in from scores by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f_measure: f64,
    pub roc_area: f64,
    pub prc_area: f64,
    pub flags: MetricFlags,
}

/// Exact counts with positive class = 1.
pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<ConfusionCounts, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (p, y) in predictions.iter().zip(labels) {
        match (*p != 0, *y != 0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Scalar metrics from confusion counts. Any 0/0 denominator yields 0 with
/// the matching flag set; `roc_area`/`prc_area` are left at 0 for the
/// harness to fill. F-measure is computed as `2TP / (2TP + FP + FN)`, the
/// reduced form of `2PR / (P + R)`, so it is a single correctly-rounded
/// division.
pub fn compute_metrics(counts: &ConfusionCounts) -> Result<MetricVector, MetricError> {
    let total = counts.total();
    if total == 0 {
        return Err(MetricError::Empty);
    }
    let mut flags = MetricFlags::default();
    let mut ratio = |num: u64, den: u64, flag: &mut bool| {
        if den == 0 {
            *flag = true;
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = (counts.tp + counts.tn) as f64 / total as f64;
    let sensitivity = ratio(counts.tp, counts.fn_ + counts.tp, &mut flags.sensitivity_undefined);
    let specificity = ratio(counts.tn, counts.fp + counts.tn, &mut flags.specificity_undefined);
    let precision = ratio(counts.tp, counts.tp + counts.fp, &mut flags.precision_undefined);
    let f_measure =
        ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn_, &mut flags.f_measure_undefined);
    Ok(MetricVector {
        accuracy,
        sensitivity,
        specificity,
        precision,
        f_measure,
        roc_area: 0.0,
        prc_area: 0.0,
        flags,
    })
}

/// Sorts indices by descending score and walks groups of tied scores.
/// Yields cumulative (tp, fp) after each group.
fn threshold_sweep(scores: &[f64], labels: &[u8]) -> Vec<(u64, u64)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|a, b| scores[*b].partial_cmp(&scores[*a]).expect("scores must not be NaN"));
    let mut points = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp, fp));
    }
    points
}

/// Area under the ROC curve by trapezoidal integration over the threshold
/// sweep. Tied scores are collapsed into one threshold, which makes the
/// result equal to the Mann-Whitney pair statistic with ties counted half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { predictions: scores.len(), labels: labels.len() });
    }
    let pos = labels.iter().filter(|y| **y != 0).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut auc = 0.0;
    let (mut prev_tp, mut prev_fp) = (0u64, 0u64);
    for (tp, fp) in threshold_sweep(scores, labels) {
        auc += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(auc / (pos as f64 * neg as f64))
}

/// Area under the precision-recall curve as average precision with step
/// interpolation: sum of (R_k - R_{k-1}) * P_k over descending unique score
/// thresholds.
pub fn prc_area(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { predictions: scores.len(), labels: labels.len() });
    }
    let pos = labels.iter().filter(|y| **y != 0).count() as u64;
    if pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in threshold_sweep(scores, labels) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}
