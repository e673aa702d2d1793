//! Detection and localization metrics with exact tie handling.
//!
//! * AUROC uses the Mann-Whitney statistic with midranks, so tied scores
//!   count one half.
//! * Average precision sums `(R_k - R_{k-1}) * P_k` over a descending sweep
//!   in which all samples sharing a score enter together.
//! * F1-max takes the best F1 over thresholds at each distinct score, with
//!   `score >= t` predicted anomalous.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::feature_store::PixelMask;
use crate::map::AnomalyMap;

/// Scores with binary labels (`true` = anomalous).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dims("label count", scores.len(), labels.len()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("metric scores".into()));
        }
        Ok(Self { scores, labels })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }

    /// Groups of `(positives, negatives)` sharing one score, highest score
    /// first.
    fn descending_groups(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<(usize, usize)> = Vec::new();
        let mut prev: Option<f64> = None;
        for i in order {
            let s = self.scores[i];
            if prev != Some(s) {
                groups.push((0, 0));
                prev = Some(s);
            }
            let g = groups.last_mut().unwrap();
            if self.labels[i] {
                g.0 += 1;
            } else {
                g.1 += 1;
            }
        }
        groups
    }
}

/// Area under the ROC curve.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let n_pos = set.positives();
    let n_neg = set.negatives();
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({n_pos} positive, {n_neg} negative)"
        )));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));
    // ranks doubled so midranks stay integral
    let mut rank_sum2: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && set.scores[order[end + 1]] == set.scores[order[start]] {
            end += 1;
        }
        let midrank2 = (start + 1 + end + 1) as u128;
        for &i in &order[start..=end] {
            if set.labels[i] {
                rank_sum2 += midrank2;
            }
        }
        start = end + 1;
    }
    let n_pos = n_pos as u128;
    let u2 = rank_sum2 - n_pos * (n_pos + 1);
    Ok(u2 as f64 / 2.0 / (n_pos as f64 * n_neg as f64))
}

/// Average precision over the descending-score sweep.
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    let n_pos = set.positives();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive".into()));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (pos, neg) in set.descending_groups() {
        tp += pos;
        fp += neg;
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Best F1 over thresholds placed at each distinct score.
pub fn f1_max(set: &ScoredSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("F1 input"));
    }
    let n_pos = set.positives();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut best = 0.0f64;
    for (pos, neg) in set.descending_groups() {
        tp += pos;
        fp += neg;
        let f1 = if tp == 0 {
            0.0
        } else {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall = tp as f64 / n_pos as f64;
            2.0 * precision * recall / (precision + recall)
        };
        best = best.max(f1);
    }
    Ok(best)
}

/// Pixel AUROC over all pixels of all maps pooled together.
pub fn pixel_auroc(maps: &[&AnomalyMap], masks: &[&PixelMask]) -> Result<f64> {
    if maps.len() != masks.len() {
        return Err(Error::dims("mask count", maps.len(), masks.len()));
    }
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (map, mask) in maps.iter().zip(masks) {
        if (map.height(), map.width()) != (mask.height(), mask.width()) {
            return Err(Error::dims(
                "mask size",
                map.height() * map.width(),
                mask.height() * mask.width(),
            ));
        }
        scores.extend(map.data().iter().map(|&v| v as f64));
        labels.extend(mask.data().iter().map(|&v| v == 1));
    }
    if !labels.iter().any(|&l| l) {
        return Err(Error::UndefinedMetric("pixel AUROC needs at least one defect pixel".into()));
    }
    auroc(&ScoredSet::new(scores, labels)?)
}

/// Image-level detection metrics for one score column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectionMetrics {
    pub auroc: f64,
    pub ap: f64,
    pub f1_max: f64,
}

impl DetectionMetrics {
    pub fn compute(set: &ScoredSet) -> Result<Self> {
        Ok(Self {
            auroc: auroc(set)?,
            ap: average_precision(set)?,
            f1_max: f1_max(set)?,
        })
    }
}
