//! Top-1 accuracy, AUROC and FPR at a target TPR.
//!
//! Scores follow the "higher = in-distribution" orientation. AUROC counts
//! ties as one half (Mann–Whitney). FPR@TPR uses the decision rule
//! "ID iff score ≥ t" with `t` chosen among observed ID scores.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

pub const DEFAULT_TARGET_TPR: f64 = 0.95;

/// ID scores are positives, anomaly scores negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryScoreSet {
    pub id_scores: Vec<f64>,
    pub anomaly_scores: Vec<f64>,
}

impl BinaryScoreSet {
    pub fn new(id_scores: Vec<f64>, anomaly_scores: Vec<f64>) -> Result<Self> {
        let s = BinaryScoreSet {
            id_scores,
            anomaly_scores,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        ensure!(!self.id_scores.is_empty(), "no ID scores");
        ensure!(!self.anomaly_scores.is_empty(), "no anomaly scores");
        ensure!(
            self.id_scores.iter().chain(&self.anomaly_scores).all(|v| !v.is_nan()),
            "scores contain NaN"
        );
        Ok(())
    }

    /// The same data with roles (and orientation) swapped.
    pub fn flipped(&self) -> BinaryScoreSet {
        BinaryScoreSet {
            id_scores: self.anomaly_scores.clone(),
            anomaly_scores: self.id_scores.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub value: f64,
    pub positives: usize,
    pub negatives: usize,
}

pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    ensure!(!labels.is_empty(), "accuracy over an empty set");
    ensure!(
        predictions.len() == labels.len(),
        "{} predictions for {} labels",
        predictions.len(),
        labels.len()
    );
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Area under the ROC curve from the Mann–Whitney U statistic with
/// mid-ranks for ties. O((n+m) log(n+m)).
pub fn auroc(set: &BinaryScoreSet) -> Result<f64> {
    set.validate()?;
    let n = set.id_scores.len();
    let m = set.anomaly_scores.len();

    let mut pooled: Vec<(f64, bool)> = set
        .id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(set.anomaly_scores.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("NaN rejected above"));

    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        // Ranks i+1..=j+1 share the mid-rank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        let positives = pooled[i..=j].iter().filter(|p| p.1).count() as u128;
        twice_rank_sum += twice_mid * positives;
        i = j + 1;
    }
    // 2U = 2R − n(n+1)
    let twice_u = twice_rank_sum - (n as u128) * (n as u128 + 1);
    Ok(twice_u as f64 / (2.0 * n as f64 * m as f64))
}

/// False-positive rate at the largest threshold whose TPR reaches `target_tpr`.
pub fn fpr_at_tpr(set: &BinaryScoreSet, target_tpr: f64) -> Result<f64> {
    set.validate()?;
    ensure!(
        target_tpr > 0.0 && target_tpr <= 1.0,
        "target TPR must lie in (0, 1], got {target_tpr}"
    );
    let n = set.id_scores.len();
    let mut ids = set.id_scores.clone();
    ids.sort_by(|a, b| b.partial_cmp(a).expect("NaN rejected above"));

    // Smallest k with k/n ≥ target; the k-th largest ID score is then the
    // largest threshold that keeps at least k positives.
    let k = (1..=n)
        .find(|&k| k as f64 / n as f64 >= target_tpr)
        .unwrap_or(n);
    let threshold = ids[k - 1];

    let false_pos = set.anomaly_scores.iter().filter(|&&s| s >= threshold).count();
    Ok(false_pos as f64 / set.anomaly_scores.len() as f64)
}

pub fn fpr_at_tpr95(set: &BinaryScoreSet) -> Result<f64> {
    fpr_at_tpr(set, DEFAULT_TARGET_TPR)
}
