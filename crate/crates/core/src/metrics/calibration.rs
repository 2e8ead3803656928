//! Calibration-style metrics: ECE, UE and localization/size CE.

use serde::{Deserialize, Serialize};

use crate::decode::Detection;
use crate::error::{Error, Result};

use super::matching::GroundTruth;

/// One equal-width score bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: usize,
    pub mean_score: f64,
    pub accuracy: f64,
}

/// Bin `b` covers `[b/n, (b+1)/n)`. The product `score * n` can round across
/// an edge, so the guess is corrected against the edges themselves.
fn bin_index(score: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut b = ((score * n).floor().max(0.0) as usize).min(n_bins - 1);
    if b > 0 && score < b as f64 / n {
        b -= 1;
    } else if b + 1 < n_bins && score >= (b + 1) as f64 / n {
        b += 1;
    }
    b
}

/// Reliability table over `n_bins` equal-width bins on [0, 1]. The last bin
/// is closed on the right so a score of exactly 1 lands in it.
pub fn reliability_bins(scores: &[f64], correct: &[bool], n_bins: usize) -> Result<Vec<ReliabilityBin>> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("n_bins must be at least 1".into()));
    }
    if scores.len() != correct.len() {
        return Err(Error::ShapeMismatch(format!("{} scores vs {} flags", scores.len(), correct.len())));
    }
    let mut sums = vec![(0usize, 0.0f64, 0usize); n_bins];
    for (&s, &c) in scores.iter().zip(correct) {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidArgument(format!("score {s} outside [0, 1]")));
        }
        let b = &mut sums[bin_index(s, n_bins)];
        b.0 += 1;
        b.1 += s;
        b.2 += c as usize;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, (n, s, c))| ReliabilityBin {
            bin_low: i as f64 / n_bins as f64,
            bin_high: (i + 1) as f64 / n_bins as f64,
            count: n,
            mean_score: if n == 0 { 0.0 } else { s / n as f64 },
            accuracy: if n == 0 { 0.0 } else { c as f64 / n as f64 },
        })
        .collect())
}

/// Expected calibration error in percent. Empty input gives 0.
pub fn ece(scores: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    let bins = reliability_bins(scores, correct, n_bins)?;
    if scores.is_empty() {
        return Ok(0.0);
    }
    let n = scores.len() as f64;
    Ok(bins
        .iter()
        .map(|b| b.count as f64 / n * (b.mean_score - b.accuracy).abs())
        .sum::<f64>()
        * 100.0)
}

/// Minimum uncertainty error in percent.
///
/// A detection is accepted when `u <= τ`. The sweep covers every observed
/// value, the midpoints between neighbours, and a threshold below the
/// smallest value (reject everything). When one group is empty only the
/// other group's error fraction counts.
pub fn uncertainty_error(u: &[f64], correct: &[bool]) -> Result<f64> {
    if u.len() != correct.len() {
        return Err(Error::ShapeMismatch(format!("{} values vs {} flags", u.len(), correct.len())));
    }
    let n_correct = correct.iter().filter(|&&c| c).count();
    let n_wrong = correct.len() - n_correct;
    if u.is_empty() {
        return Ok(0.0);
    }
    let error = |rejected_correct: usize, accepted_wrong: usize| match (n_correct, n_wrong) {
        (0, w) => accepted_wrong as f64 / w as f64,
        (c, 0) => rejected_correct as f64 / c as f64,
        (c, w) => 0.5 * rejected_correct as f64 / c as f64 + 0.5 * accepted_wrong as f64 / w as f64,
    };
    // A midpoint accepts the same set as the observed value just below it,
    // so sweeping the unique values in order covers every partition.
    let mut idx: Vec<usize> = (0..u.len()).collect();
    idx.sort_by(|&a, &b| u[a].total_cmp(&u[b]));
    let (mut accepted_correct, mut accepted_wrong) = (0usize, 0usize);
    let mut best = error(n_correct, 0);
    for (k, &i) in idx.iter().enumerate() {
        if correct[i] {
            accepted_correct += 1;
        } else {
            accepted_wrong += 1;
        }
        if idx.get(k + 1).is_none_or(|&j| u[j] != u[i]) {
            best = best.min(error(n_correct - accepted_correct, accepted_wrong));
        }
    }
    Ok(best * 100.0)
}

/// Which uncertainty pair a calibration or boundary metric reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Location,
    Dims,
}

/// Mean gap between predicted and measured normalized error, in percent,
/// averaged over the two axes. `None` on an empty set.
pub fn calibration_error(pairs: &[(&Detection, &GroundTruth)], signal: Signal) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let (mut a, mut b) = (0.0, 0.0);
    for (d, g) in pairs {
        let (w, h) = (d.bbox.w.max(f64::MIN_POSITIVE), d.bbox.h.max(f64::MIN_POSITIVE));
        match signal {
            Signal::Location => {
                let (dx, dy) = d.bbox.center();
                let (gx, gy) = g.bbox.center();
                a += (d.u_x - (dx - gx).abs() / w).abs();
                b += (d.u_y - (dy - gy).abs() / h).abs();
            }
            Signal::Dims => {
                a += (d.u_w - (d.bbox.w - g.bbox.w).abs() / w).abs();
                b += (d.u_h - (d.bbox.h - g.bbox.h).abs() / h).abs();
            }
        }
    }
    let n = pairs.len() as f64;
    Some((a / n + b / n) / 2.0 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    #[test]
    fn ece_examples() {
        let s = vec![0.7; 10];
        let c: Vec<bool> = (0..10).map(|i| i < 7).collect();
        assert!(ece(&s, &c, 1).unwrap().abs() < 1e-12);
        let s = vec![1.0; 4];
        assert!((ece(&s, &[true, false, true, false], 10).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(ece(&[], &[], 10).unwrap(), 0.0);
        assert!(ece(&[1.5], &[true], 10).is_err());
        assert!(ece(&[0.5], &[true], 0).is_err());
    }

    #[test]
    fn ue_examples() {
        let u = [0.1, 0.1, 0.9, 0.9];
        let c = [true, true, false, false];
        assert_eq!(uncertainty_error(&u, &c).unwrap(), 0.0);
        assert_eq!(uncertainty_error(&[0.5, 0.5], &[true, false]).unwrap(), 50.0);
        let u = [0.2, 0.4, 0.2, 0.4];
        assert_eq!(uncertainty_error(&u, &[true, true, false, false]).unwrap(), 50.0);
        // single group: correct ones can all be accepted
        assert_eq!(uncertainty_error(&[0.3, 0.6], &[true, true]).unwrap(), 0.0);
    }

    fn det(b: BBox, ux: f64, uy: f64) -> Detection {
        Detection {
            image_id: 0,
            class: 0,
            score: 0.9,
            bbox: b,
            u_obj: 0.1,
            u_x: ux,
            u_y: uy,
            u_w: 0.0,
            u_h: 0.0,
            u_cls: 0.0,
            inner_box: b,
            outer_box: b,
        }
    }

    #[test]
    fn ce_examples() {
        let gt = GroundTruth { image_id: 0, class: 0, bbox: BBox::new(0.0, 0.0, 10.0, 10.0) };
        let d = det(BBox::new(3.0, 0.0, 10.0, 10.0), 0.1, 0.0);
        let ce = calibration_error(&[(&d, &gt)], Signal::Location).unwrap();
        assert!((ce - 10.0).abs() < 1e-12);
        let perfect = det(gt.bbox, 0.0, 0.0);
        let ce2 = calibration_error(&[(&d, &gt), (&perfect, &gt)], Signal::Location).unwrap();
        assert!((ce2 - 5.0).abs() < 1e-12);
        assert_eq!(calibration_error(&[(&perfect, &gt)], Signal::Dims), Some(0.0));
        assert_eq!(calibration_error(&[], Signal::Dims), None);
    }
}
