//! Change-point and pair-classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: usize = 5;
pub const TOLERANCE_SWEEP: [usize; 4] = [1, 3, 5, 7];

pub fn localisation_error(tau_hat: usize, tau: usize) -> usize {
    tau_hat.abs_diff(tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// (predicted, true) timestamp pairs.
    pub matches: Vec<(usize, usize)>,
}

/// Change-point F1 where a prediction within `±tol` of a true change-point
/// counts as a hit. Matching is one-to-one and of maximum size.
///
/// Each tolerance window has the same width, so sweeping truths in ascending
/// order and giving each the earliest unused prediction inside its window is
/// optimal. Empty prediction or truth sets score 0.
pub fn adjusted_f1(predicted: &[usize], truth: &[usize], tol: usize) -> DetectionScore {
    let mut preds = predicted.to_vec();
    preds.sort_unstable();
    preds.dedup();
    let mut truths = truth.to_vec();
    truths.sort_unstable();
    truths.dedup();

    let mut used = vec![false; preds.len()];
    let mut matches = Vec::new();
    for &c in &truths {
        let hit = preds
            .iter()
            .enumerate()
            .find(|&(i, &p)| !used[i] && p.abs_diff(c) <= tol)
            .map(|(i, _)| i);
        if let Some(i) = hit {
            used[i] = true;
            matches.push((preds[i], c));
        }
    }
    let m = matches.len() as f64;
    let precision = if preds.is_empty() { 0.0 } else { m / preds.len() as f64 };
    let recall = if truths.is_empty() { 0.0 } else { m / truths.len() as f64 };
    let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
    DetectionScore { precision, recall, f1, matches }
}

/// Accuracy and binary F1 with label 1 as the positive class.
pub fn pair_metrics(predicted: &[u8], truth: &[u8]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::param(format!("{} predictions for {} labels", predicted.len(), truth.len())));
    }
    if predicted.is_empty() {
        return Err(Error::param("no predictions to score"));
    }
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predicted.iter().zip(truth) {
        correct += usize::from(p == y);
        match (p == 1, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let accuracy = correct as f64 / predicted.len() as f64;
    let denom = 2 * tp + fp + fneg;
    let f1 = if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 };
    Ok((accuracy, f1))
}

/// One benchmark result row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub method: String,
    pub scenario: String,
    pub level: f64,
    pub seed: u64,
    pub metrics: std::collections::BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn summarize(values: &[f64]) -> Summary {
    let count = values.len();
    if count == 0 {
        return Summary { mean: f64::NAN, std: f64::NAN, count };
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let std = if count > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, count }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn localisation_examples() {
        assert_eq!(localisation_error(50, 50), 0);
        assert_eq!(localisation_error(52, 50), 2);
        assert_eq!(localisation_error(50, 52), 2);
    }

    #[test]
    fn adjusted_f1_examples() {
        assert_eq!(adjusted_f1(&[52], &[50], 5).f1, 1.0);
        assert_eq!(adjusted_f1(&[70], &[50], 5).f1, 0.0);
        let s = adjusted_f1(&[52, 90], &[50], 5);
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(adjusted_f1(&[], &[50], 5).f1, 0.0);
        assert_eq!(adjusted_f1(&[50], &[], 5).f1, 0.0);
    }

    #[test]
    fn one_prediction_cannot_serve_two_truths() {
        let s = adjusted_f1(&[50], &[48, 52], 5);
        assert_eq!(s.matches.len(), 1);
        assert_eq!(s.recall, 0.5);
    }

    #[test]
    fn nearest_first_is_not_maximal() {
        // nearest-first gives truth 10 the prediction 12 and leaves 14 unmatched
        let s = adjusted_f1(&[12, 7], &[10, 14], 5);
        assert_eq!(s.matches.len(), 2);
        assert_eq!(s.f1, 1.0);
    }

    #[test]
    fn pair_metric_examples() {
        assert_eq!(pair_metrics(&[1, 0, 1], &[1, 0, 1]).unwrap(), (1.0, 1.0));
        assert_eq!(pair_metrics(&[0, 0, 0, 0], &[1, 1, 0, 0]).unwrap(), (0.5, 0.0));
        assert_eq!(pair_metrics(&[0, 1], &[1, 0]).unwrap().0, 0.0);
        assert!(pair_metrics(&[0], &[0, 1]).is_err());
    }

    /// Exhaustive maximum matching by trying every assignment.
    pub(crate) fn brute_max_matching(preds: &[usize], truths: &[usize], tol: usize) -> usize {
        fn go(ti: usize, preds: &[usize], truths: &[usize], used: &mut Vec<bool>, tol: usize) -> usize {
            if ti == truths.len() {
                return 0;
            }
            let mut best = go(ti + 1, preds, truths, used, tol);
            for pi in 0..preds.len() {
                if !used[pi] && preds[pi].abs_diff(truths[ti]) <= tol {
                    used[pi] = true;
                    best = best.max(1 + go(ti + 1, preds, truths, used, tol));
                    used[pi] = false;
                }
            }
            best
        }
        go(0, preds, truths, &mut vec![false; preds.len()], tol)
    }

    fn distinct(v: Vec<usize>) -> Vec<usize> {
        let mut v = v;
        v.sort_unstable();
        v.dedup();
        v
    }

    proptest! {
        #[test]
        fn matches_exhaustive_optimum(p in proptest::collection::vec(1usize..60, 0..7),
                                      t in proptest::collection::vec(1usize..60, 0..7),
                                      tol in 0usize..8) {
            let (p, t) = (distinct(p), distinct(t));
            let s = adjusted_f1(&p, &t, tol);
            prop_assert_eq!(s.matches.len(), brute_max_matching(&p, &t, tol));
            for &(a, b) in &s.matches {
                prop_assert!(a.abs_diff(b) <= tol);
            }
        }

        #[test]
        fn order_invariant(p in proptest::collection::vec(1usize..60, 0..7),
                           t in proptest::collection::vec(1usize..60, 0..7)) {
            let mut pr = p.clone();
            pr.reverse();
            let mut tr = t.clone();
            tr.reverse();
            prop_assert_eq!(adjusted_f1(&p, &t, 5), adjusted_f1(&pr, &tr, 5));
        }
    }
}
