use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::protocol::VFLSystem;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Present for binary tasks only.
    pub auc_roc: Option<f64>,
}

/// Accuracy (and AUC for binary tasks) of joint predictions on aligned views.
pub fn evaluate(system: &VFLSystem, views: &[Matrix], labels: &[usize]) -> Result<Metrics> {
    let refs: Vec<&Matrix> = views.iter().collect();
    let trace = system.trace(&refs)?;
    if labels.len() != trace.output().rows() {
        return Err(Error::shape("label count differs from row count"));
    }
    if labels.is_empty() {
        return Err(Error::invalid("cannot evaluate on zero rows"));
    }
    let preds = crate::protocol::predict_from_logits(trace.logits());
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    let auc = if system.classes == 2 {
        let probs = system.expand_probabilities(trace.output());
        let scores: Vec<f64> = probs.iter_rows().map(|r| r[1]).collect();
        auc_roc(&scores, labels)
    } else {
        None
    };
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        auc_roc: auc,
    })
}

/// Area under the ROC curve for positive label 1 via the rank statistic,
/// averaging ranks over ties. `None` when only one class is present.
pub fn auc_roc(scores: &[f64], labels: &[usize]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}
