//! Centroid moving averages and the momentum / length-scale schedules.

use crate::grid::{ScalarGrid, VectorGrid};
use crate::model::{normalized_sq_distance, CentroidSet};

/// Collects the weighted embedding sums of one minibatch for the centroid
/// update.
///
/// With the balanced update, weights are `y^lambda` and the batch mean is
/// normalized by its own weight total. Otherwise weights are the raw target
/// values and feed count-scaled running averages.
#[derive(Debug, Clone)]
pub struct CentroidAccumulator {
    lambda: f64,
    balanced: bool,
    /// Squared normalized-distance cutoff, `(3 sigma)^2`, when protection is on.
    outlier_cutoff: Option<f64>,
    sums: Vec<Vec<f64>>,
    weights: Vec<f64>,
    excluded: usize,
}

impl CentroidAccumulator {
    pub fn new(
        current: &CentroidSet,
        lambda: f64,
        length_scale: f64,
        outlier_protection: bool,
        balanced: bool,
    ) -> Self {
        let k = current.num_classes();
        CentroidAccumulator {
            lambda,
            balanced,
            outlier_cutoff: outlier_protection.then(|| (3.0 * length_scale).powi(2)),
            sums: vec![vec![0.0; current.dim()]; k],
            weights: vec![0.0; k],
            excluded: 0,
        }
    }

    /// Adds one image's per-class embedding maps and target heatmaps.
    /// Outliers are judged against the centroids in `current`.
    pub fn add(&mut self, current: &CentroidSet, embeddings: &[VectorGrid], targets: &[ScalarGrid]) {
        let mut cell = Vec::with_capacity(current.dim());
        for (c, (z, t)) in embeddings.iter().zip(targets).enumerate() {
            let e = &current.centroids[c];
            let n = z.plane_len();
            for (i, &y) in t.as_slice().iter().enumerate() {
                if y <= 0.0 {
                    continue;
                }
                let w = if self.balanced { y.powf(self.lambda) } else { y };
                if w == 0.0 {
                    continue;
                }
                cell.clear();
                cell.extend((0..z.channels()).map(|d| z.as_slice()[d * n + i]));
                if let Some(cut) = self.outlier_cutoff {
                    if normalized_sq_distance(&cell, e) > cut {
                        self.excluded += 1;
                        continue;
                    }
                }
                for (s, &v) in self.sums[c].iter_mut().zip(&cell) {
                    *s += w * v;
                }
                self.weights[c] += w;
            }
        }
    }

    /// Number of positive cells dropped as outliers so far.
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    /// Applies the moving-average step and returns the new centroid set
    /// carrying `momentum` and `length_scale`.
    pub fn finish(self, current: &CentroidSet, momentum: f64, length_scale: f64) -> CentroidSet {
        let mut next = current.clone();
        next.momentum = momentum;
        next.length_scale = length_scale;
        for c in 0..current.num_classes() {
            let w = self.weights[c];
            if self.balanced {
                if w > 0.0 {
                    for (e, &s) in next.centroids[c].iter_mut().zip(&self.sums[c]) {
                        *e = momentum * *e + (1.0 - momentum) * s / w;
                    }
                }
            } else {
                let count = momentum * current.running_counts[c] + (1.0 - momentum) * w;
                for (m, &s) in next.running_sums[c].iter_mut().zip(&self.sums[c]) {
                    *m = momentum * *m + (1.0 - momentum) * s;
                }
                next.running_counts[c] = count;
                if count > 0.0 {
                    for (e, &m) in next.centroids[c].iter_mut().zip(&next.running_sums[c]) {
                        *e = m / count;
                    }
                }
            }
        }
        next
    }
}

/// Balanced centroid update for one minibatch given as per-class embedding
/// and target maps. Centroids without any included positive cell keep their
/// position.
pub fn update_centroids(
    current: &CentroidSet,
    embeddings: &[VectorGrid],
    targets: &[ScalarGrid],
    lambda: f64,
    momentum: f64,
    length_scale: f64,
    outlier_protection: bool,
) -> CentroidSet {
    let mut acc = CentroidAccumulator::new(current, lambda, length_scale, outlier_protection, true);
    acc.add(current, embeddings, targets);
    acc.finish(current, momentum, length_scale)
}

/// Momentum of the latest schedule entry whose epoch is `<= epoch`.
///
/// Falls back to the first entry for epochs before it; panics on an empty
/// schedule.
pub fn schedule_momentum(epoch: usize, schedule: &[(usize, f64)]) -> f64 {
    assert!(!schedule.is_empty(), "momentum schedule must not be empty");
    schedule
        .iter()
        .take_while(|&&(e, _)| e <= epoch)
        .last()
        .unwrap_or(&schedule[0])
        .1
}

/// `max(sigma_min, sigma_init * decay^step)`.
pub fn anneal_length_scale(step: u64, sigma_init: f64, decay: f64, sigma_min: f64) -> f64 {
    let exponent = i32::try_from(step).unwrap_or(i32::MAX);
    (sigma_init * decay.powi(exponent)).max(sigma_min)
}
