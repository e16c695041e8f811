//! Axis-aligned boxes and the overlap measures built on them.
//!
//! Boxes are stored as left/top/width/height in continuous pixel units. The
//! corner form is computed on demand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle with strictly positive extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let finite = x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite();
        if !finite || w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox { x, y, w, h });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, w, h)
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Self::new(x0, y0, x1 - x0, y1 - y0)
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.x
    }

    #[inline]
    pub fn y(&self) -> f64 {
        self.y
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.w
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.h
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
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    /// Geometric mean of width and height.
    pub fn mean_side(&self) -> f64 {
        (self.w * self.h).sqrt()
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Scales width and height about the box center.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let (cx, cy) = self.center();
        Self::from_center(cx, cy, self.w * factor, self.h * factor)
    }

    pub fn with_center(&self, cx: f64, cy: f64) -> Result<Self> {
        Self::from_center(cx, cy, self.w, self.h)
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        iw * ih
    }

    /// Smallest axis-aligned box containing both.
    pub fn enclosing(&self, other: &BoundingBox) -> BoundingBox {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        BoundingBox {
            x: x0,
            y: y0,
            w: self.right().max(other.right()) - x0,
            h: self.bottom().max(other.bottom()) - y0,
        }
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x: f64,
            y: f64,
            w: f64,
            h: f64,
        }
        let raw = Raw::deserialize(de)?;
        BoundingBox::new(raw.x, raw.y, raw.w, raw.h).map_err(serde::de::Error::custom)
    }
}

/// Tracked state: the box plus the pyramid level that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub bbox: BoundingBox,
    /// 1-based pyramid level in `1..=levels`.
    pub scale_index: usize,
}

impl TargetState {
    pub fn new(bbox: BoundingBox, scale_index: usize, levels: usize) -> Result<Self> {
        if scale_index == 0 || scale_index > levels {
            return Err(Error::InvalidArgument(format!(
                "scale index {scale_index} outside 1..={levels}"
            )));
        }
        Ok(Self { bbox, scale_index })
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Generalized IoU: IoU minus the fraction of the enclosing box not covered
/// by the union.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let hull = a.enclosing(b).area();
    let value = inter / union - (hull - union) / hull;
    value.clamp(-1.0, 1.0)
}

pub fn center_error(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    (ax - bx).hypot(ay - by)
}
