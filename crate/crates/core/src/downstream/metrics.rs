use serde::{Deserialize, Serialize};

use super::ProbeError;

/// Accuracy, unweighted average recall and macro-F1, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub uar: f64,
    pub macro_f1: f64,
}

/// `confusion[label][prediction]`.
pub fn confusion(predictions: &[usize], labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

pub fn metrics(predictions: &[usize], labels: &[usize]) -> Result<Metrics, ProbeError> {
    if labels.is_empty() {
        return Err(ProbeError::EmptyInput);
    }
    if predictions.len() != labels.len() {
        return Err(ProbeError::LengthMismatch(predictions.len(), labels.len()));
    }
    let k = predictions.iter().chain(labels).max().map_or(0, |m| m + 1);
    let cm = confusion(predictions, labels, k);
    let correct: usize = (0..k).map(|i| cm[i][i]).sum();
    let (mut recall_sum, mut n_rec) = (0.0, 0usize);
    let (mut f1_sum, mut n_f1) = (0.0, 0usize);
    for c in 0..k {
        let support: usize = cm[c].iter().sum();
        let predicted: usize = (0..k).map(|r| cm[r][c]).sum();
        let tp = cm[c][c];
        if support > 0 {
            recall_sum += tp as f64 / support as f64;
            n_rec += 1;
        }
        if support + predicted > 0 {
            // 2TP / (2TP + FP + FN) = 2TP / (predicted + support)
            f1_sum += 2.0 * tp as f64 / (predicted + support) as f64;
            n_f1 += 1;
        }
    }
    Ok(Metrics { accuracy: correct as f64 / labels.len() as f64, uar: recall_sum / n_rec as f64, macro_f1: f1_sum / n_f1 as f64 })
}
