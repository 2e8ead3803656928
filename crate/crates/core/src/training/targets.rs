use crate::error::{Error, Result};
use crate::geometry::{cell_radius, BBox};
use crate::grid::{ScalarGrid, VectorGrid};

/// Training targets for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthHeatmaps {
    /// Per-class Gaussian splats, 1 exactly at annotated centers.
    pub heatmaps: Vec<ScalarGrid>,
    /// Target `(w, h)` in input pixels, valid only where `center_mask` is set.
    pub dims_targets: VectorGrid,
    /// Row-major flags marking object-center cells.
    pub center_mask: Vec<bool>,
}

impl GroundTruthHeatmaps {
    pub fn shape(&self) -> (usize, usize) {
        self.dims_targets.shape()
    }

    pub fn num_centers(&self) -> usize {
        self.center_mask.iter().filter(|&&m| m).count()
    }

    /// Sum over all classes and cells of `y^lambda`.
    pub fn weight_sum(&self, lambda: f64) -> f64 {
        self.heatmaps
            .iter()
            .flat_map(|h| h.as_slice())
            .filter(|&&y| y > 0.0)
            .map(|&y| y.powf(lambda))
            .sum()
    }
}

/// Cell containing an input-pixel coordinate, clamped into the grid.
pub(crate) fn center_cell(coord: f64, stride: usize, extent: usize) -> usize {
    let c = (coord / stride as f64).floor();
    if c <= 0.0 {
        0
    } else {
        (c as usize).min(extent.saturating_sub(1))
    }
}

fn draw_gaussian(heatmap: &mut ScalarGrid, row: usize, col: usize, radius: usize) {
    let sigma = (2 * radius + 1) as f64 / 6.0;
    let r = radius as isize;
    let (h, w) = heatmap.shape();
    for dy in -r..=r {
        let y = row as isize + dy;
        if y < 0 || y >= h as isize {
            continue;
        }
        for dx in -r..=r {
            let x = col as isize + dx;
            if x < 0 || x >= w as isize {
                continue;
            }
            let g = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            if g < f64::EPSILON {
                continue;
            }
            let (y, x) = (y as usize, x as usize);
            if g > heatmap.get(y, x) {
                heatmap.set(y, x, g);
            }
        }
    }
}

/// Splats one Gaussian per object onto its class heatmap.
///
/// The splat radius is the min-overlap 0.7 radius of the box measured in
/// cells; overlapping splats combine by elementwise max.
pub fn splat_ground_truth(
    objects: &[(BBox, usize)],
    num_classes: usize,
    grid: (usize, usize),
    stride: usize,
) -> Result<GroundTruthHeatmaps> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    let (h, w) = grid;
    let mut heatmaps = vec![ScalarGrid::zeros(h, w); num_classes];
    let mut dims_targets = VectorGrid::zeros(2, h, w);
    let mut center_mask = vec![false; h * w];
    for (i, &(bbox, class)) in objects.iter().enumerate() {
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "object {i} has non-positive size {}x{}",
                bbox.w, bbox.h
            )));
        }
        if class >= num_classes {
            return Err(Error::ClassOutOfRange {
                index: class,
                num_classes,
            });
        }
        if h == 0 || w == 0 {
            continue;
        }
        let (cx, cy) = bbox.center();
        let col = center_cell(cx, stride, w);
        let row = center_cell(cy, stride, h);
        let radius = cell_radius(bbox.h / stride as f64, bbox.w / stride as f64);
        draw_gaussian(&mut heatmaps[class], row, col, radius);
        dims_targets.set(0, row, col, bbox.w);
        dims_targets.set(1, row, col, bbox.h);
        center_mask[row * w + col] = true;
    }
    Ok(GroundTruthHeatmaps {
        heatmaps,
        dims_targets,
        center_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_object_peaks_at_one() {
        let b = BBox::new(10.0, 20.0, 24.0, 16.0);
        let gt = splat_ground_truth(&[(b, 1)], 3, (32, 32), 4).unwrap();
        assert_eq!(gt.heatmaps[1].get(7, 5), 1.0);
        assert_eq!(gt.heatmaps[1].max_value(), 1.0);
        assert_eq!(gt.heatmaps[0].max_value(), 0.0);
        assert!(gt.center_mask[7 * 32 + 5]);
        assert_eq!(gt.dims_targets.cell(7, 5), vec![24.0, 16.0]);
        assert!(gt.heatmaps[1].as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn empty_scene_is_all_zero() {
        let gt = splat_ground_truth(&[], 2, (8, 8), 4).unwrap();
        assert!(gt.heatmaps.iter().all(|h| h.max_value() == 0.0));
        assert_eq!(gt.num_centers(), 0);
    }

    #[test]
    fn identical_overlapping_objects_match_single() {
        let b = BBox::new(30.0, 30.0, 40.0, 40.0);
        let one = splat_ground_truth(&[(b, 0)], 1, (32, 32), 4).unwrap();
        let two = splat_ground_truth(&[(b, 0), (b, 0)], 1, (32, 32), 4).unwrap();
        // Oracle: elementwise max of two identical splats is the splat itself.
        let merged: Vec<f64> = one.heatmaps[0]
            .as_slice()
            .iter()
            .zip(one.heatmaps[0].as_slice())
            .map(|(a, b)| a.max(*b))
            .collect();
        assert_eq!(two.heatmaps[0].as_slice(), merged.as_slice());
    }

    #[test]
    fn zero_size_box_rejected() {
        let b = BBox::new(3.0, 3.0, 0.0, 5.0);
        assert!(splat_ground_truth(&[(b, 0)], 1, (8, 8), 4).is_err());
    }
}
