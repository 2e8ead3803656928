use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::decode::Detection;
use crate::geometry::BBox;

/// An annotated object used for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub class: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Intersection over union; 0 when the union has no area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 || inter <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// A matched detection / ground-truth pair, by index into the inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub detection: usize,
    pub ground_truth: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// In the order the detections were processed (score descending).
    pub pairs: Vec<MatchedPair>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
    /// Detection indices in processing order.
    pub order: Vec<usize>,
    /// `matched[i]` tells whether detection `i` is a true positive.
    pub matched: Vec<bool>,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.pairs.len()
    }
}

/// Total order used to rank detections: score descending, ties broken by
/// image, class and box so results do not depend on input order.
pub(crate) fn rank_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.image_id.cmp(&b.image_id))
        .then(a.class.cmp(&b.class))
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

fn gt_order(a: &GroundTruth, b: &GroundTruth) -> Ordering {
    a.image_id
        .cmp(&b.image_id)
        .then(a.class.cmp(&b.class))
        .then(a.bbox.x.total_cmp(&b.bbox.x))
        .then(a.bbox.y.total_cmp(&b.bbox.y))
        .then(a.bbox.w.total_cmp(&b.bbox.w))
        .then(a.bbox.h.total_cmp(&b.bbox.h))
}

/// Greedy matching in descending score order: each detection claims the
/// unclaimed ground truth of the same image and class with the highest IoU,
/// provided it reaches `iou_threshold`.
pub fn match_detections(detections: &[Detection], ground_truths: &[GroundTruth], iou_threshold: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| rank_order(&detections[a], &detections[b]));
    // Candidate ground truths visited in a canonical order so IoU ties
    // resolve independently of input order.
    let mut gt_idx: Vec<usize> = (0..ground_truths.len()).collect();
    gt_idx.sort_by(|&a, &b| gt_order(&ground_truths[a], &ground_truths[b]));
    let mut groups: HashMap<(u64, usize), Vec<usize>> = HashMap::new();
    for &g in &gt_idx {
        groups.entry((ground_truths[g].image_id, ground_truths[g].class)).or_default().push(g);
    }
    let mut claimed = vec![false; ground_truths.len()];
    let mut matched = vec![false; detections.len()];
    let mut result = MatchResult::default();
    for &d in &order {
        let det = &detections[d];
        let mut best: Option<(usize, f64)> = None;
        let candidates = groups.get(&(det.image_id, det.class)).map_or(&[][..], Vec::as_slice);
        for &g in candidates {
            if claimed[g] {
                continue;
            }
            let v = iou(&det.bbox, &ground_truths[g].bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) => {
                claimed[g] = true;
                matched[d] = true;
                result.pairs.push(MatchedPair {
                    detection: d,
                    ground_truth: g,
                    iou: v,
                });
            }
            None => result.false_positives.push(d),
        }
    }
    result.false_negatives = gt_idx.into_iter().filter(|&g| !claimed[g]).collect();
    result.order = order;
    result.matched = matched;
    result
}
