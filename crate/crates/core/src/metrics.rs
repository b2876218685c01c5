//! Binary classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// A sample is predicted positive when its score is strictly above
/// `threshold`.
pub fn confusion_at(probs: &[f64], labels: &[u8], threshold: f64) -> Confusion {
    let mut c = Confusion {
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
    };
    for (&p, &y) in probs.iter().zip(labels) {
        match (p > threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Mann-Whitney estimate of P(score+ > score-), ties counted as one half.
/// Sorts once and uses mid-ranks, O(n log n).
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of positive ranks, ranks 1-based, ties share the mid-rank;
    // doubled to stay in integers
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += mid2 * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    let u2 = rank_sum2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc_roc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub ppv: f64,
    pub npv: f64,
    pub confusion: Confusion,
    pub threshold: f64,
}

impl MetricReport {
    /// Undefined ratios (zero denominator) are reported as 0.
    pub fn compute(probs: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let c = confusion_at(probs, labels, threshold);
        Ok(MetricReport {
            auc_roc: auc_roc(probs, labels)?,
            sensitivity: ratio(c.tp, c.tp + c.fn_),
            specificity: ratio(c.tn, c.tn + c.fp),
            ppv: ratio(c.tp, c.tp + c.fp),
            npv: ratio(c.tn, c.tn + c.fn_),
            confusion: c,
            threshold,
        })
    }

    /// One row of the model-comparison table.
    pub fn table_row(&self, model: &str) -> String {
        format!(
            "{},{:.4},{:.4},{:.4},{:.4},{:.4}",
            model, self.auc_roc, self.sensitivity, self.specificity, self.ppv, self.npv
        )
    }
}

pub const TABLE_HEADER: &str = "model,auc_roc,sensitivity,specificity,ppv,npv";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_predictions_have_no_errors() {
        let labels = [1, 0, 1, 1, 0];
        let probs: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let c = confusion_at(&probs, &labels, 0.5);
        assert_eq!((c.fp, c.fn_, c.tp, c.tn), (0, 0, 3, 2));
    }

    #[test]
    fn half_is_negative() {
        let c = confusion_at(&[0.5; 4], &[1, 0, 1, 0], 0.5);
        assert_eq!((c.tp, c.fp), (0, 0));
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn auc_extremes() {
        assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc_roc(&[0.3, 0.2], &[1, 1]), Err(Error::SingleClass)));
    }

    #[test]
    fn report_ratios() {
        let probs = [0.9, 0.8, 0.3, 0.6, 0.1, 0.7];
        let labels = [1, 1, 1, 0, 0, 0];
        let r = MetricReport::compute(&probs, &labels, 0.5).unwrap();
        let c = r.confusion;
        assert_eq!(r.sensitivity, c.tp as f64 / (c.tp + c.fn_) as f64);
        assert_eq!(r.sensitivity + c.fn_ as f64 / (c.tp + c.fn_) as f64, 1.0);
        assert_eq!(r.specificity + c.fp as f64 / (c.tn + c.fp) as f64, 1.0);
    }
}
