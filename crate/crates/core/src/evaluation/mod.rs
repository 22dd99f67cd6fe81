//! Metrics, one-vs-all collapse, mask thresholding and part aggregation.

use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Result, SddsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Positive class is 1 (defective); labels must be 0 or 1.
    Binary,
    /// Unweighted mean of per-class scores over `classes` classes.
    Macro { classes: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[label][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    pub averaging: Averaging,
}

impl MetricsReport {
    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// `(tp, fp, fn, tn)` for a binary report.
    pub fn binary_counts(&self) -> Option<(u64, u64, u64, u64)> {
        match self.averaging {
            Averaging::Binary => {
                let c = &self.confusion;
                Some((c[1][1], c[0][1], c[1][0], c[0][0]))
            }
            Averaging::Macro { .. } => None,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn metrics(predictions: &[u8], labels: &[u8], averaging: Averaging) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(SddsError::Shape(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let k = match averaging {
        Averaging::Binary => 2,
        Averaging::Macro { classes } => classes,
    };
    let mut confusion = vec![vec![0u64; k]; k];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p as usize >= k || y as usize >= k {
            return Err(SddsError::InvalidTarget(format!("class {} outside 0..{k}", p.max(y))));
        }
        confusion[y as usize][p as usize] += 1;
    }
    let correct: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let accuracy = ratio(correct, labels.len() as u64);
    let per_class = |c: usize| {
        let tp = confusion[c][c];
        let predicted: u64 = (0..k).map(|y| confusion[y][c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
        (p, r, harmonic(p, r))
    };
    let (precision, recall, f1) = match averaging {
        Averaging::Binary => per_class(1),
        Averaging::Macro { .. } => {
            let scores: Vec<_> = (0..k).map(per_class).collect();
            let mean = |f: fn(&(f64, f64, f64)) -> f64| scores.iter().map(f).sum::<f64>() / k as f64;
            (mean(|s| s.0), mean(|s| s.1), mean(|s| s.2))
        }
    };
    Ok(MetricsReport { accuracy, precision, recall, f1, confusion, averaging })
}

/// Class 0 stays 0, every defect class becomes 1.
pub fn one_vs_all_collapse(predictions: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let collapse = |v: &[u8]| v.iter().map(|&c| u8::from(c > 0)).collect();
    (collapse(predictions), collapse(labels))
}

/// 1 iff the summed foreground probability is strictly above `threshold`.
pub fn mask_to_binary(mask: &Tensor, threshold: f64) -> u8 {
    u8::from(mask.sum() > threshold)
}

/// Foreground plane `1 - p(background)` of a `(h, w, classes)` probability map.
pub fn foreground_plane(probs: &Tensor) -> Result<Tensor> {
    let shape = probs.shape();
    if shape.len() != 3 || shape[2] < 2 {
        return Err(SddsError::Shape(format!("expected (h, w, classes >= 2), got {shape:?}")));
    }
    let k = shape[2];
    let data = probs.data().chunks(k).map(|px| px[1..].iter().sum()).collect();
    Tensor::new(vec![shape[0], shape[1]], data)
}

/// Every candidate the threshold sweep considers: one sentinel below the
/// smallest sum, midpoints between consecutive distinct sums, one above.
pub fn threshold_candidates(sums: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = sums.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut out = Vec::with_capacity(s.len() + 1);
    if let (Some(&lo), Some(&hi)) = (s.first(), s.last()) {
        out.push(lo - 1.0);
        out.extend(s.windows(2).map(|w| (w[0] + w[1]) / 2.0));
        out.push(hi + 1.0);
    }
    out
}

fn threshold_accuracy(sums: &[f64], labels: &[u8], t: f64) -> f64 {
    let correct = sums.iter().zip(labels).filter(|(&s, &y)| u8::from(s > t) == y).count();
    correct as f64 / sums.len() as f64
}

/// Accuracy-maximizing threshold over mask sums; ties go to the smallest.
pub fn optimize_threshold_sums(sums: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    if sums.is_empty() {
        return Err(SddsError::Empty("threshold search needs at least one mask".into()));
    }
    if sums.len() != labels.len() {
        return Err(SddsError::Shape(format!("{} sums vs {} labels", sums.len(), labels.len())));
    }
    // Sorting once lets every candidate be scored in a single sweep.
    let mut order: Vec<usize> = (0..sums.len()).collect();
    order.sort_by(|&a, &b| sums[a].total_cmp(&sums[b]));
    let positives = labels.iter().filter(|&&y| y > 0).count();
    // Everything above the lowest sentinel is predicted positive.
    let mut correct = positives;
    let mut best = (sums[order[0]] - 1.0, correct);
    let mut i = 0;
    while i < order.len() {
        let v = sums[order[i]];
        while i < order.len() && sums[order[i]] == v {
            correct = if labels[order[i]] > 0 { correct - 1 } else { correct + 1 };
            i += 1;
        }
        let t = if i < order.len() { (v + sums[order[i]]) / 2.0 } else { v + 1.0 };
        if correct > best.1 {
            best = (t, correct);
        }
    }
    Ok((best.0, best.1 as f64 / sums.len() as f64))
}

pub fn optimize_threshold(masks: &[Tensor], labels: &[u8]) -> Result<(f64, f64)> {
    let sums: Vec<f64> = masks.iter().map(Tensor::sum).collect();
    optimize_threshold_sums(&sums, labels)
}

/// Accuracy of a fixed threshold; exposed for the paper-style dual report.
pub fn accuracy_at(sums: &[f64], labels: &[u8], threshold: f64) -> f64 {
    threshold_accuracy(sums, labels, threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationRule {
    pub min_count: usize,
}

impl Default for AggregationRule {
    fn default() -> Self {
        Self { min_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartVerdict {
    pub part_id: u32,
    pub segment_verdicts: Vec<u8>,
    pub rule: AggregationRule,
    pub defective: bool,
}

pub fn aggregate_part(part_id: u32, segment_verdicts: &[u8], rule: AggregationRule) -> Result<PartVerdict> {
    if segment_verdicts.is_empty() {
        return Err(SddsError::Empty(format!("part {part_id} has no segment verdicts")));
    }
    if rule.min_count == 0 {
        return Err(SddsError::Config("min_count must be at least 1".into()));
    }
    let positives = segment_verdicts.iter().filter(|&&v| v > 0).count();
    Ok(PartVerdict {
        part_id,
        segment_verdicts: segment_verdicts.to_vec(),
        rule,
        defective: positives >= rule.min_count,
    })
}
