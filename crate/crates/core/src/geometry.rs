//! Axis-aligned boxes and the min-overlap Gaussian radius shared by target
//! splatting and the decoder's analysis window.

use serde::{Deserialize, Serialize};

/// Axis-aligned box in input pixels: top-left corner plus size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        BBox { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    #[inline]
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    #[inline]
    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    #[inline]
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    /// True when `other` lies inside `self` (boundaries inclusive), with a
    /// small absolute slack for floating-point round-off.
    pub fn contains(&self, other: &BBox) -> bool {
        const EPS: f64 = 1e-9;
        other.x >= self.x - EPS
            && other.y >= self.y - EPS
            && other.right() <= self.right() + EPS
            && other.bottom() <= self.bottom() + EPS
    }

    /// Grows (or, for negative slack, shrinks) the box symmetrically about its
    /// center. Shrinking clamps each side at zero size.
    pub fn inflate(&self, slack_x: f64, slack_y: f64) -> BBox {
        let (cx, cy) = self.center();
        let w = (self.w + 2.0 * slack_x).max(0.0);
        let h = (self.h + 2.0 * slack_y).max(0.0);
        BBox::from_center(cx, cy, w, h)
    }

    /// Scales width and height about the center.
    pub fn scale_about_center(&self, factor: f64) -> BBox {
        let (cx, cy) = self.center();
        BBox::from_center(cx, cy, self.w * factor, self.h * factor)
    }
}

/// CornerNet min-overlap radius, in the same units as `height`/`width`.
///
/// Returns the smallest of the three corner-displacement radii that keep an
/// IoU of at least `min_overlap`, computed the way CenterNet's reference code
/// does (without the 2a divisor on the quadratic roots).
pub fn gaussian_radius(height: f64, width: f64, min_overlap: f64) -> f64 {
    let b1 = height + width;
    let c1 = width * height * (1.0 - min_overlap) / (1.0 + min_overlap);
    let r1 = (b1 + (b1 * b1 - 4.0 * c1).max(0.0).sqrt()) / 2.0;

    let b2 = 2.0 * (height + width);
    let c2 = (1.0 - min_overlap) * width * height;
    let r2 = (b2 + (b2 * b2 - 16.0 * c2).max(0.0).sqrt()) / 2.0;

    let a3 = 4.0 * min_overlap;
    let b3 = -2.0 * min_overlap * (height + width);
    let c3 = (min_overlap - 1.0) * width * height;
    let r3 = (b3 + (b3 * b3 - 4.0 * a3 * c3).max(0.0).sqrt()) / 2.0;

    r1.min(r2).min(r3)
}

/// Min-overlap 0.7 radius for a box measured in heatmap cells, floored to an
/// integer cell count.
pub fn cell_radius(height_cells: f64, width_cells: f64) -> usize {
    let r = gaussian_radius(height_cells, width_cells, 0.7);
    if r.is_finite() && r > 0.0 {
        r.floor() as usize
    } else {
        0
    }
}
