//! Turns heatmaps into detections carrying objectness, location, size and
//! class uncertainties plus inner/outer uncertainty boundary boxes.
//!
//! The decoder needs only class heatmaps, a dimensions map and the stride, so
//! it also runs post hoc on heatmaps exported from any center-based detector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cell_radius, BBox};
use crate::grid::{ScalarGrid, VectorGrid};
use crate::model::{objectness_uncertainty, HeadOutputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Minimum heatmap score for a peak.
    pub peak_threshold: f64,
    /// Exponent on |cos| / |sin| weighting off-axis cells in the location
    /// variance.
    pub eta: f64,
    /// Multiplier `k` on the boundary slack.
    pub boundary_scale: f64,
    /// Lower bound on the analysis-window radius, in cells.
    pub min_window_radius: usize,
    /// Keep at most this many detections per image, highest score first.
    pub max_detections: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            peak_threshold: 0.1,
            eta: 4.0,
            boundary_scale: 1.0,
            min_window_radius: 1,
            max_detections: 100,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.peak_threshold > 0.0 && self.peak_threshold < 1.0) {
            return Err(Error::InvalidArgument("peak_threshold must lie in (0, 1)".into()));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::InvalidArgument("eta must be >= 0".into()));
        }
        if !(self.boundary_scale > 0.0) {
            return Err(Error::InvalidArgument("boundary_scale must be positive".into()));
        }
        Ok(())
    }
}

/// A local maximum of one class heatmap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub row: usize,
    pub col: usize,
    pub class: usize,
    pub score: f64,
}

/// A decoded object with all per-signal uncertainties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub class: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub u_obj: f64,
    pub u_x: f64,
    pub u_y: f64,
    pub u_w: f64,
    pub u_h: f64,
    pub u_cls: f64,
    pub inner_box: BBox,
    pub outer_box: BBox,
}

/// Square window of cells around a center, clipped to the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub row: usize,
    pub col: usize,
    pub radius: usize,
}

impl Window {
    /// Window sized like a ground-truth splat for a `width x height` pixel
    /// box at `stride`, never smaller than `min_radius`.
    pub fn for_box(row: usize, col: usize, width: f64, height: f64, stride: usize, min_radius: usize) -> Self {
        let s = stride as f64;
        let r = cell_radius(height.max(0.0) / s, width.max(0.0) / s);
        Window {
            row,
            col,
            radius: r.max(min_radius),
        }
    }

    /// Yields `(row, col, d_row, d_col)` for every in-bounds cell.
    fn cells(&self, height: usize, width: usize) -> impl Iterator<Item = (usize, usize, isize, isize)> + '_ {
        let r = self.radius as isize;
        let (cr, cc) = (self.row as isize, self.col as isize);
        (-r..=r).flat_map(move |dy| {
            (-r..=r).filter_map(move |dx| {
                let (y, x) = (cr + dy, cc + dx);
                (y >= 0 && x >= 0 && y < height as isize && x < width as isize)
                    .then_some((y as usize, x as usize, dy, dx))
            })
        })
    }
}

/// Cells that dominate their 3x3 neighborhood and reach `threshold`.
///
/// Equal-valued neighbors are resolved in raster order: a cell loses to an
/// equal neighbor that precedes it. Output is sorted by `(row, col, class)`.
pub fn extract_peaks(heatmaps: &[ScalarGrid], threshold: f64) -> Vec<Peak> {
    let mut peaks = Vec::new();
    for (class, hm) in heatmaps.iter().enumerate() {
        let (h, w) = hm.shape();
        for row in 0..h {
            'cell: for col in 0..w {
                let v = hm.get(row, col);
                if !(v >= threshold) {
                    continue;
                }
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (y, x) = (row as isize + dy, col as isize + dx);
                        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                            continue;
                        }
                        let n = hm.get(y as usize, x as usize);
                        let precedes = dy < 0 || (dy == 0 && dx < 0);
                        if n > v || (n == v && precedes) {
                            continue 'cell;
                        }
                    }
                }
                peaks.push(Peak {
                    row,
                    col,
                    class,
                    score: v,
                });
            }
        }
    }
    peaks.sort_by_key(|p| (p.row, p.col, p.class));
    peaks
}

/// `(U_x, U_y)`: score-weighted spread of the peak in input pixels, with
/// off-axis cells attenuated by `|cos a|^eta` (x) or `|sin a|^eta` (y), then
/// normalized by the predicted width / height. The center cell enters with
/// angular weight 1 and zero offset.
pub fn location_uncertainty(
    heatmap: &ScalarGrid,
    window: Window,
    width: f64,
    height: f64,
    eta: f64,
    stride: usize,
) -> (f64, f64) {
    let (mut nx, mut dx_sum, mut ny, mut dy_sum) = (0.0, 0.0, 0.0, 0.0);
    let s = stride as f64;
    for (y, x, dy, dx) in window.cells(heatmap.height(), heatmap.width()) {
        let p = heatmap.get(y, x);
        if dy == 0 && dx == 0 {
            dx_sum += p;
            dy_sum += p;
            continue;
        }
        let (ox, oy) = (dx as f64 * s, dy as f64 * s);
        let r = ox.hypot(oy);
        let wx = p * (ox.abs() / r).powf(eta);
        let wy = p * (oy.abs() / r).powf(eta);
        nx += ox * ox * wx;
        dx_sum += wx;
        ny += oy * oy * wy;
        dy_sum += wy;
    }
    let u = |num: f64, den: f64, extent: f64| {
        if den > 0.0 && extent > 0.0 {
            (num / den).sqrt() / extent
        } else {
            0.0
        }
    };
    (u(nx, dx_sum, width), u(ny, dy_sum, height))
}

/// `(U_w, U_h)`: score-weighted RMSE of the per-cell size predictions around
/// the center against the center's prediction, normalized by it.
pub fn dimension_uncertainty(
    dims_map: &VectorGrid,
    heatmap: &ScalarGrid,
    window: Window,
    width: f64,
    height: f64,
) -> (f64, f64) {
    let (mut sw, mut sh, mut total) = (0.0, 0.0, 0.0);
    for (y, x, _, _) in window.cells(heatmap.height(), heatmap.width()) {
        let p = heatmap.get(y, x);
        sw += p * (width - dims_map.get(0, y, x)).powi(2);
        sh += p * (height - dims_map.get(1, y, x)).powi(2);
        total += p;
    }
    let u = |s: f64, extent: f64| {
        if total > 0.0 && extent > 0.0 {
            (s / total).sqrt() / extent
        } else {
            0.0
        }
    };
    (u(sw, width), u(sh, height))
}

/// Class ambiguity from the class scores at one cell.
///
/// With scores sorted descending, accumulates
/// `U(i) = U(i-1) + (1 - U(i-1)) * (p(i) / p(1))^i` for `i = 2..=N` from
/// `U(1) = 0`, clamped to `[0, 1]`.
pub fn class_uncertainty(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("class uncertainty needs at least one class".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = sorted[0];
    if !(top > 0.0) {
        return Err(Error::InvalidArgument("top class score must be positive".into()));
    }
    let mut u = 0.0f64;
    for (k, &p) in sorted.iter().enumerate().skip(1) {
        let i = (k + 1) as i32;
        u += (1.0 - u) * (p.max(0.0) / top).powi(i);
    }
    Ok(u.clamp(0.0, 1.0))
}

/// Inner and outer boxes from per-axis pixel slack
/// `k * U_loc * extent + k * U_dim * extent / 2`.
pub fn uncertainty_boundaries(bbox: &BBox, u_x: f64, u_y: f64, u_w: f64, u_h: f64, k: f64) -> (BBox, BBox) {
    let sx = k * u_x * bbox.w + k * u_w * bbox.w / 2.0;
    let sy = k * u_y * bbox.h + k * u_h * bbox.h / 2.0;
    (bbox.inflate(-sx, -sy), bbox.inflate(sx, sy))
}

/// Which uncertainty signal drives a boundary pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundarySignal {
    Location,
    Dimensions,
    Combined,
}

impl Detection {
    /// Boundary boxes driven by one signal only.
    pub fn boundaries(&self, signal: BoundarySignal, k: f64) -> (BBox, BBox) {
        match signal {
            BoundarySignal::Location => uncertainty_boundaries(&self.bbox, self.u_x, self.u_y, 0.0, 0.0, k),
            BoundarySignal::Dimensions => uncertainty_boundaries(&self.bbox, 0.0, 0.0, self.u_w, self.u_h, k),
            BoundarySignal::Combined => uncertainty_boundaries(&self.bbox, self.u_x, self.u_y, self.u_w, self.u_h, k),
        }
    }
}

/// Decodes raw maps. Detections come back sorted by score, descending, with
/// equal scores kept in `(row, col, class)` order.
pub fn decode_maps(
    image_id: u64,
    heatmaps: &[ScalarGrid],
    dims_map: &VectorGrid,
    stride: usize,
    config: &DecodeConfig,
) -> Result<Vec<Detection>> {
    config.validate()?;
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be positive".into()));
    }
    if dims_map.channels() != 2 || heatmaps.iter().any(|h| h.shape() != dims_map.shape()) {
        return Err(Error::ShapeMismatch("heatmaps and dimensions map differ in shape".into()));
    }
    let s = stride as f64;
    let mut dets = Vec::new();
    for peak in extract_peaks(heatmaps, config.peak_threshold) {
        let heat = &heatmaps[peak.class];
        let w = dims_map.get(0, peak.row, peak.col);
        let h = dims_map.get(1, peak.row, peak.col);
        let cx = (peak.col as f64 + 0.5) * s;
        let cy = (peak.row as f64 + 0.5) * s;
        let bbox = BBox::from_center(cx, cy, w.max(0.0), h.max(0.0));
        let window = Window::for_box(peak.row, peak.col, w, h, stride, config.min_window_radius);
        let (u_x, u_y) = location_uncertainty(heat, window, w, h, config.eta, stride);
        let (u_w, u_h) = dimension_uncertainty(dims_map, heat, window, w, h);
        let class_scores: Vec<f64> = heatmaps.iter().map(|m| m.get(peak.row, peak.col)).collect();
        let u_cls = class_uncertainty(&class_scores)?;
        let (inner_box, outer_box) = uncertainty_boundaries(&bbox, u_x, u_y, u_w, u_h, config.boundary_scale);
        dets.push(Detection {
            image_id,
            class: peak.class,
            score: peak.score,
            bbox,
            u_obj: objectness_uncertainty(peak.score),
            u_x,
            u_y,
            u_w,
            u_h,
            u_cls,
            inner_box,
            outer_box,
        });
    }
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    dets.truncate(config.max_detections);
    Ok(dets)
}

/// Decodes the detector's head outputs.
pub fn decode(image_id: u64, outputs: &HeadOutputs, config: &DecodeConfig) -> Result<Vec<Detection>> {
    decode_maps(image_id, &outputs.class_heatmaps, &outputs.dims_map, outputs.stride, config)
}
