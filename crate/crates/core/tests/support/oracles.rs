//! Brute-force metric oracles. Each one enumerates thresholds or bins
//! directly from its definition and shares no code with the library.

use certainnet_core::geometry::BBox;
use certainnet_core::metrics::GroundTruth;
use certainnet_core::Detection;

fn unique_desc(scores: &[f64]) -> Vec<f64> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v.dedup();
    v
}

/// (precision, recall) when accepting everything scored at least `t`.
fn pr_at(scores: &[f64], positive: &[bool], n_pos: usize, t: f64) -> (f64, f64) {
    let (mut tp, mut fp) = (0, 0);
    for (s, p) in scores.iter().zip(positive) {
        if *s >= t {
            if *p {
                tp += 1
            } else {
                fp += 1
            }
        }
    }
    (tp as f64 / (tp + fp) as f64, tp as f64 / n_pos as f64)
}

/// All-point AP: each recall increment is weighted by the best precision
/// reachable at that recall or beyond.
pub fn ap(scores: &[f64], hits: &[bool], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let points: Vec<(f64, f64)> = unique_desc(scores).into_iter().map(|t| pr_at(scores, hits, n_gt, t)).collect();
    let mut recalls: Vec<f64> = points.iter().map(|p| p.1).collect();
    recalls.sort_by(|a, b| a.partial_cmp(b).unwrap());
    recalls.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        let best = points.iter().filter(|p| p.1 >= r).map(|p| p.0).fold(0.0, f64::max);
        area += (r - prev) * best;
        prev = r;
    }
    Some(area * 100.0)
}

/// Step-wise PR area with no envelope.
pub fn pr_area(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    if n_pos == 0 || n_pos == positive.len() {
        return None;
    }
    let mut area = 0.0;
    let mut prev = 0.0;
    for t in unique_desc(scores) {
        let (p, r) = pr_at(scores, positive, n_pos, t);
        area += (r - prev) * p;
        prev = r;
    }
    Some(area * 100.0)
}

pub fn aupr_in(scores: &[f64], correct: &[bool]) -> Option<f64> {
    pr_area(scores, correct)
}

pub fn aupr_out(scores: &[f64], correct: &[bool]) -> Option<f64> {
    let s: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
    let c: Vec<bool> = correct.iter().map(|c| !c).collect();
    pr_area(&s, &c)
}

/// Mann-Whitney statistic: probability a positive outranks a negative,
/// ties counting one half.
pub fn auroc(scores: &[f64], correct: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(correct).filter(|(_, c)| **c).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(correct).filter(|(_, c)| !**c).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64 * 100.0)
}

/// Bin `b` holds scores in `[b/n, (b+1)/n)`; the last bin also holds 1.
pub fn ece(scores: &[f64], correct: &[bool], n_bins: usize) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for b in 0..n_bins {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        let members: Vec<usize> = (0..scores.len())
            .filter(|&i| scores[i] >= lo && (scores[i] < hi || (b == n_bins - 1 && scores[i] <= 1.0)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let conf = members.iter().map(|&i| scores[i]).sum::<f64>() / m;
        let acc = members.iter().filter(|&&i| correct[i]).count() as f64 / m;
        total += m / scores.len() as f64 * (conf - acc).abs();
    }
    total * 100.0
}

/// Explicit sweep over every observed value, every midpoint, and one
/// threshold below all values.
pub fn ue(u: &[f64], correct: &[bool]) -> f64 {
    if u.is_empty() {
        return 0.0;
    }
    let mut vals = u.to_vec();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals.dedup();
    let mut taus = vec![vals[0] - 1.0];
    for w in vals.windows(2) {
        taus.push((w[0] + w[1]) / 2.0);
    }
    taus.extend(&vals);
    let nc = correct.iter().filter(|c| **c).count();
    let nw = correct.len() - nc;
    taus.iter()
        .map(|&t| {
            let rc = (0..u.len()).filter(|&i| correct[i] && u[i] > t).count() as f64;
            let aw = (0..u.len()).filter(|&i| !correct[i] && u[i] <= t).count() as f64;
            if nc == 0 {
                aw / nw as f64
            } else if nw == 0 {
                rc / nc as f64
            } else {
                0.5 * rc / nc as f64 + 0.5 * aw / nw as f64
            }
        })
        .fold(f64::INFINITY, f64::min)
        * 100.0
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Greedy matching by descending score, written as a plain double loop.
/// Returns the matched flag per detection and the matched gt per detection.
pub fn greedy_match(dets: &[Detection], gts: &[GroundTruth], thr: f64) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap().then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut out = vec![None; dets.len()];
    for d in order {
        let mut best = None;
        let mut best_iou = thr;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.image_id != dets[d].image_id || gt.class != dets[d].class {
                continue;
            }
            let v = iou(&dets[d].bbox, &gt.bbox);
            if v >= best_iou && (best.is_none() || v > best_iou) {
                best = Some(g);
                best_iou = v;
            }
        }
        if let Some(g) = best {
            taken[g] = true;
        }
        out[d] = best;
    }
    out
}
