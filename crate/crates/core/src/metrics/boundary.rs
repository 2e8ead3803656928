use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// Boundary quality terms for one box, as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryQuality {
    pub ubq: f64,
    pub br: f64,
    pub ibq: f64,
    pub obq: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    // inner ⊆ outer, so a zero outer extent means both are zero.
    if b <= 0.0 {
        1.0
    } else {
        (a / b).min(1.0)
    }
}

/// Uncertainty boundary quality of an inner/outer pair against the truth.
pub fn ubq(gt: &BBox, inner: &BBox, outer: &BBox) -> Result<BoundaryQuality> {
    let eps = 1e-9;
    let inside = inner.x >= outer.x - eps
        && inner.y >= outer.y - eps
        && inner.right() <= outer.right() + eps
        && inner.bottom() <= outer.bottom() + eps;
    if !inside {
        return Err(Error::InvalidArgument(format!("inner box {inner:?} is not inside outer box {outer:?}")));
    }
    let ibq = if inner.area() <= 0.0 {
        0.0
    } else {
        (gt.intersection_area(inner) / inner.area()).min(1.0)
    };
    let obq = if gt.area() <= 0.0 {
        0.0
    } else {
        (gt.intersection_area(outer) / gt.area()).min(1.0)
    };
    let br = 0.5 * (ratio(inner.w, outer.w) + ratio(inner.h, outer.h));
    Ok(BoundaryQuality {
        ubq: 0.5 * (ibq + obq) * br,
        br,
        ibq,
        obq,
    })
}
