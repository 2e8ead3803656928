//! Training losses with analytic gradients.

use crate::error::{Error, Result};
use crate::grid::{ScalarGrid, VectorGrid};
use crate::model::CentroidSet;

const P_MIN: f64 = 1e-12;
const P_MAX: f64 = 1.0 - 1e-7;

/// Binary cross-entropy of a score against a soft target.
pub fn bce_term(p: f64, y: f64) -> f64 {
    let p = p.clamp(P_MIN, P_MAX);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn bce_grad(p: f64, y: f64) -> f64 {
    let p = p.clamp(P_MIN, P_MAX);
    -y / p + (1.0 - y) / (1.0 - p)
}

/// Mean weighted binary cross-entropy between kernel scores and the
/// ground-truth heatmaps over every cell of every class. Cells with target
/// `>= 0.5` are weighted by `positive_weight`.
///
/// Returns the loss and its gradient with respect to each score.
pub fn detection_loss(
    scores: &[ScalarGrid],
    targets: &[ScalarGrid],
    positive_weight: f64,
) -> Result<(f64, Vec<ScalarGrid>)> {
    if scores.len() != targets.len() || scores.iter().zip(targets).any(|(s, t)| s.shape() != t.shape()) {
        return Err(Error::ShapeMismatch("score and target heatmaps differ in shape".into()));
    }
    let count: usize = scores.iter().map(ScalarGrid::len).sum();
    if count == 0 {
        return Ok((0.0, scores.to_vec()));
    }
    let norm = 1.0 / count as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(scores.len());
    for (s, t) in scores.iter().zip(targets) {
        let mut g = ScalarGrid::zeros(s.height(), s.width());
        for ((gv, &p), &y) in g.as_mut_slice().iter_mut().zip(s.as_slice()).zip(t.as_slice()) {
            if p.is_nan() || y.is_nan() {
                return Err(Error::NonFinite("detection loss input".into()));
            }
            let w = if y >= 0.5 { positive_weight } else { 1.0 };
            total += w * bce_term(p, y);
            *gv = w * bce_grad(p, y) * norm;
        }
        grads.push(g);
    }
    Ok((total * norm, grads))
}

/// Hyperspace regularization normalized by the maps' own `sum(y^lambda)`.
///
/// Returns 0 with zero gradients when no cell is positive.
pub fn regularization_loss(
    embeddings: &[VectorGrid],
    centroids: &CentroidSet,
    targets: &[ScalarGrid],
    lambda: f64,
) -> Result<(f64, Vec<VectorGrid>)> {
    let total: f64 = targets
        .iter()
        .flat_map(|t| t.as_slice())
        .filter(|&&y| y > 0.0)
        .map(|&y| y.powf(lambda))
        .sum();
    regularization_loss_normalized(embeddings, centroids, targets, lambda, total)
}

/// Weighted squared distance of embeddings to their class centroid, divided
/// by an externally supplied `normalizer` (a minibatch's total
/// `sum(y^lambda)`). Gradients flow to the embeddings only.
pub fn regularization_loss_normalized(
    embeddings: &[VectorGrid],
    centroids: &CentroidSet,
    targets: &[ScalarGrid],
    lambda: f64,
    normalizer: f64,
) -> Result<(f64, Vec<VectorGrid>)> {
    if embeddings.len() != targets.len() || embeddings.len() != centroids.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} embedding maps, {} target maps, {} centroids",
            embeddings.len(),
            targets.len(),
            centroids.num_classes()
        )));
    }
    let mut grads: Vec<VectorGrid> = embeddings
        .iter()
        .map(|z| VectorGrid::zeros(z.channels(), z.height(), z.width()))
        .collect();
    if !(normalizer > 0.0) {
        return Ok((0.0, grads));
    }
    let mut loss = 0.0;
    for (c, (z, t)) in embeddings.iter().zip(targets).enumerate() {
        if z.shape() != t.shape() || z.channels() != centroids.dim() {
            return Err(Error::ShapeMismatch(format!("class {c} embedding/target shape")));
        }
        let e = &centroids.centroids[c];
        let n = z.plane_len();
        let g = grads[c].as_mut_slice();
        for (i, &y) in t.as_slice().iter().enumerate() {
            if y <= 0.0 {
                continue;
            }
            let wt = y.powf(lambda) / normalizer;
            if wt == 0.0 {
                continue;
            }
            for (d, &ed) in e.iter().enumerate() {
                let diff = z.as_slice()[d * n + i] - ed;
                loss += wt * diff * diff;
                g[d * n + i] = 2.0 * wt * diff;
            }
        }
    }
    Ok((loss, grads))
}

/// Mean absolute error of predicted `(w, h)` at object-center cells.
///
/// Returns 0 with zero gradient when there are no centers.
pub fn dims_loss(
    predicted: &VectorGrid,
    targets: &VectorGrid,
    center_mask: &[bool],
) -> Result<(f64, VectorGrid)> {
    if predicted.shape() != targets.shape()
        || predicted.channels() != 2
        || targets.channels() != 2
        || center_mask.len() != predicted.plane_len()
    {
        return Err(Error::ShapeMismatch("dims map, targets and mask disagree".into()));
    }
    let mut grad = VectorGrid::zeros(2, predicted.height(), predicted.width());
    let centers = center_mask.iter().filter(|&&m| m).count();
    if centers == 0 {
        return Ok((0.0, grad));
    }
    let n = predicted.plane_len();
    let norm = 1.0 / (2 * centers) as f64;
    let mut loss = 0.0;
    let g = grad.as_mut_slice();
    for k in 0..2 {
        for (i, _) in center_mask.iter().enumerate().filter(|(_, &m)| m) {
            let diff = predicted.as_slice()[k * n + i] - targets.as_slice()[k * n + i];
            loss += diff.abs();
            g[k * n + i] = if diff > 0.0 {
                norm
            } else if diff < 0.0 {
                -norm
            } else {
                0.0
            };
        }
    }
    Ok((loss * norm, grad))
}
