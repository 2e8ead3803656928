//! Threshold-swept ranking metrics: AP, AUPR-In/Out, AUROC.
//!
//! All values are percentages. Scores are grouped into unique thresholds
//! before sweeping, so tied scores never produce order-dependent points.

use serde::{Deserialize, Serialize};

/// A point on a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// A point on a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Cumulative (positives, negatives) at every unique threshold, descending.
fn sweep(scores: &[f64], positive: &[bool]) -> Vec<(usize, usize)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (k, &i) in idx.iter().enumerate() {
        if positive[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last = k + 1 == idx.len() || scores[idx[k + 1]] != scores[i];
        if last {
            out.push((tp, fp));
        }
    }
    out
}

/// Precision-recall points at each unique score threshold.
pub fn pr_curve(scores: &[f64], positive: &[bool], num_positives: usize) -> Vec<PrPoint> {
    assert_eq!(scores.len(), positive.len());
    if num_positives == 0 {
        return Vec::new();
    }
    sweep(scores, positive)
        .into_iter()
        .map(|(tp, fp)| PrPoint {
            recall: tp as f64 / num_positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
        })
        .collect()
}

/// Average precision from ranked hits. `num_positives` may exceed the number
/// of hits (missed ground truths). `None` when there is nothing to find.
///
/// All-point mode integrates the monotone precision envelope over recall;
/// eleven-point mode averages the envelope at recall 0, 0.1, ..., 1.
pub fn average_precision_from_hits(scores: &[f64], hits: &[bool], num_positives: usize, eleven_point: bool) -> Option<f64> {
    if num_positives == 0 {
        return None;
    }
    let curve = pr_curve(scores, hits, num_positives);
    let mut env: Vec<f64> = curve.iter().map(|p| p.precision).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let ap = if eleven_point {
        (0..=10)
            .map(|k| {
                let r = k as f64 / 10.0;
                curve
                    .iter()
                    .zip(&env)
                    .filter(|(p, _)| p.recall >= r - 1e-12)
                    .map(|(_, &e)| e)
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / 11.0
    } else {
        let mut prev = 0.0;
        let mut area = 0.0;
        for (p, e) in curve.iter().zip(&env) {
            area += (p.recall - prev) * e;
            prev = p.recall;
        }
        area
    };
    Some(ap * 100.0)
}

fn step_pr_area(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let npos = positive.iter().filter(|&&p| p).count();
    if npos == 0 || npos == positive.len() {
        return None;
    }
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in pr_curve(scores, positive, npos) {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    Some(area * 100.0)
}

/// PR area with correct detections as positives, ranked by score.
pub fn aupr_in(scores: &[f64], correct: &[bool]) -> Option<f64> {
    step_pr_area(scores, correct)
}

/// PR area with incorrect detections as positives, ranked by `1 - score`.
pub fn aupr_out(scores: &[f64], correct: &[bool]) -> Option<f64> {
    let inv: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
    let wrong: Vec<bool> = correct.iter().map(|c| !c).collect();
    step_pr_area(&inv, &wrong)
}

/// ROC points from (0, 0) through every unique threshold.
pub fn roc_curve(scores: &[f64], correct: &[bool]) -> Vec<RocPoint> {
    let npos = correct.iter().filter(|&&c| c).count();
    let nneg = correct.len() - npos;
    if npos == 0 || nneg == 0 {
        return Vec::new();
    }
    let mut pts = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    pts.extend(sweep(scores, correct).into_iter().map(|(tp, fp)| RocPoint {
        fpr: fp as f64 / nneg as f64,
        tpr: tp as f64 / npos as f64,
    }));
    pts
}

/// Trapezoidal area under the ROC curve.
pub fn auroc(scores: &[f64], correct: &[bool]) -> Option<f64> {
    let pts = roc_curve(scores, correct);
    if pts.is_empty() {
        return None;
    }
    let area: f64 = pts
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Some(area * 100.0)
}
