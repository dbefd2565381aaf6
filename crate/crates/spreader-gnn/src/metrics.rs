use serde::Serialize;

use crate::error::{Error, Result};

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "confusion: {} predictions vs {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut c = Confusion {
            tp: 0,
            tn: 0,
            fp: 0,
            fn_: 0,
        };
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => return Err(Error::Data("predictions/labels must be 0 or 1".to_string())),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Evaluation result for one model on one test split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub accuracy: f64,
    pub mcc: f64,
    /// None when the test set contains a single class.
    pub roc_auc: Option<f64>,
    pub confusion: Confusion,
}

/// Fraction of matching entries.
pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "accuracy: {} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Matthews correlation coefficient; 0 by convention when any marginal
/// count is zero.
pub fn mcc(c: Confusion) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

/// ROC AUC as the Mann-Whitney statistic: the fraction of (positive,
/// negative) pairs ranked correctly, ties counted 0.5. Computed via
/// average ranks in O(n log n). Returns None when only one class is present.
pub fn roc_auc(scores: &[f64], truth: &[u8]) -> Result<Option<f64>> {
    if scores.len() != truth.len() {
        return Err(Error::Shape(format!(
            "roc_auc: {} scores vs {} labels",
            scores.len(),
            truth.len()
        )));
    }
    let n_pos = truth.iter().filter(|&&y| y == 1).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if truth[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(Some(u / (n_pos as f64 * n_neg as f64)))
}

/// Full evaluation from raw scores: threshold 0.5 for accuracy/MCC, score
/// ranking for AUC.
pub fn evaluate_scores(scores: &[f64], truth: &[u8]) -> Result<MetricsRecord> {
    let pred: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
    let confusion = Confusion::from_predictions(&pred, truth)?;
    Ok(MetricsRecord {
        accuracy: accuracy(&pred, truth)?,
        mcc: mcc(confusion),
        roc_auc: roc_auc(scores, truth)?,
        confusion,
    })
}
