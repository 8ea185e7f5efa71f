use serde::{Deserialize, Serialize};

use crate::error::{KatError, Result};

/// Area under the ROC curve by the Mann-Whitney statistic; tied scores
/// share their mean rank.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(KatError::dim(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(KatError::NonFinite(format!("score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(KatError::UndefinedMetric(
            "ROC AUC needs at least one positive and one negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; the tie group i..=j shares their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        pos_rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_bags: usize,
    pub accuracy: f64,
    /// Unweighted mean of the defined per-class AUCs.
    pub macro_auc: Option<f64>,
    /// Prevalence-weighted mean of the defined per-class AUCs.
    pub weighted_auc: Option<f64>,
    /// One-vs-rest AUC per class; `None` when the class is absent from the
    /// split or is the only class present.
    pub per_class_auc: Vec<Option<f64>>,
    pub absent_classes: Vec<usize>,
    /// Mean cross-entropy.
    pub loss: f64,
}

impl Metrics {
    /// Metrics from raw logits, one row per bag.
    pub fn from_logits(logits: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Self> {
        let mut loss = 0.0;
        for (row, &y) in logits.iter().zip(labels) {
            if y >= row.len() {
                return Err(KatError::Index(format!("label {y} with {} logits", row.len())));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let posteriors: Vec<Vec<f64>> = logits.iter().map(|r| softmax(r)).collect();
        let mut m = Self::from_posteriors(&posteriors, labels, n_classes)?;
        m.loss = loss / logits.len() as f64;
        Ok(m)
    }

    /// Metrics from class posteriors; `loss` is the mean of `-ln p[label]`.
    pub fn from_posteriors(posteriors: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<Self> {
        if posteriors.is_empty() {
            return Err(KatError::Data("cannot evaluate an empty split".into()));
        }
        if posteriors.len() != labels.len() {
            return Err(KatError::dim(format!(
                "{} posteriors for {} labels",
                posteriors.len(),
                labels.len()
            )));
        }
        for (row, &y) in posteriors.iter().zip(labels) {
            if row.len() != n_classes {
                return Err(KatError::dim(format!(
                    "posterior has {} entries, expected {n_classes}",
                    row.len()
                )));
            }
            if y >= n_classes {
                return Err(KatError::Index(format!("label {y} with {n_classes} classes")));
            }
        }
        let n = labels.len();
        let correct = posteriors.iter().zip(labels).filter(|(r, &y)| argmax(r) == y).count();
        let loss = posteriors
            .iter()
            .zip(labels)
            .map(|(r, &y)| -r[y].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n as f64;

        let mut per_class_auc = Vec::with_capacity(n_classes);
        let mut absent_classes = Vec::new();
        let (mut sum, mut wsum, mut wtot, mut count) = (0.0, 0.0, 0.0, 0usize);
        for c in 0..n_classes {
            let positives: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            let n_c = positives.iter().filter(|&&p| p).count();
            if n_c == 0 {
                absent_classes.push(c);
                per_class_auc.push(None);
                continue;
            }
            let scores: Vec<f64> = posteriors.iter().map(|r| r[c]).collect();
            match roc_auc(&scores, &positives) {
                Ok(a) => {
                    sum += a;
                    wsum += a * n_c as f64;
                    wtot += n_c as f64;
                    count += 1;
                    per_class_auc.push(Some(a));
                }
                Err(KatError::UndefinedMetric(_)) => per_class_auc.push(None),
                Err(e) => return Err(e),
            }
        }
        Ok(Metrics {
            n_bags: n,
            accuracy: correct as f64 / n as f64,
            macro_auc: (count > 0).then(|| sum / count as f64),
            weighted_auc: (count > 0).then(|| wsum / wtot),
            per_class_auc,
            absent_classes,
            loss,
        })
    }

    /// AUC of the positive class in a two-class problem.
    pub fn binary_auc(&self) -> Option<f64> {
        self.per_class_auc.get(1).copied().flatten()
    }
}
