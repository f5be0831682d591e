//! Precision, recall, F1 and average relative error.

use std::collections::BTreeMap;

use hidden_sketch::Key;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Mean `|f - f^| / f` over the true positives.
    pub are: f64,
    pub reported: usize,
    pub truth: usize,
    pub true_positives: usize,
}

/// Scores `reported` against the keys of `truth` with frequency at least
/// `threshold`.
pub fn evaluate(
    reported: &BTreeMap<Key, u64>,
    truth: &BTreeMap<Key, u64>,
    threshold: u64,
) -> Metrics {
    let truth_set: BTreeMap<Key, u64> = truth
        .iter()
        .filter(|&(_, &f)| f >= threshold)
        .map(|(&k, &f)| (k, f))
        .collect();
    let mut tp = 0usize;
    let mut rel_err = 0.0;
    for (k, &est) in reported {
        if let Some(&f) = truth_set.get(k) {
            tp += 1;
            rel_err += (f as f64 - est as f64).abs() / f as f64;
        }
    }
    let precision = match (reported.len(), truth_set.len()) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (n, _) => tp as f64 / n as f64,
    };
    let recall = if truth_set.is_empty() {
        1.0
    } else {
        tp as f64 / truth_set.len() as f64
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Metrics {
        precision,
        recall,
        f1,
        are: if tp == 0 { 0.0 } else { rel_err / tp as f64 },
        reported: reported.len(),
        truth: truth_set.len(),
        true_positives: tp,
    }
}

/// Mean relative error of `estimate` over every key in `truth`.
pub fn estimation_are(truth: &BTreeMap<Key, u64>, estimate: impl Fn(Key) -> u64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let total: f64 = truth
        .iter()
        .map(|(&k, &f)| (f as f64 - estimate(k) as f64).abs() / f as f64)
        .sum();
    total / truth.len() as f64
}
