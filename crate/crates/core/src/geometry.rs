//! Axis-aligned box arithmetic and the center/log-size box delta encoding.
//!
//! Boxes use continuous pixel coordinates with `x` growing rightward and `y`
//! growing downward. Width is `x2 - x1`; no half-open pixel convention is
//! imposed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest accepted `|tw|` / `|th|` when decoding. `e^20` is far beyond any image size.
pub const MAX_LOG_SCALE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate box {bbox:?}: width and height must be strictly positive")]
    Degenerate { bbox: BBox },
    #[error("box delta log-scale out of range (tw = {tw}, th = {th}, limit {MAX_LOG_SCALE})")]
    OutOfRange { tw: f64, th: f64 },
    #[error("invalid box ({x1}, {y1}, {x2}, {y2}): coordinates must be finite with x1 <= x2 and y1 <= y2")]
    Invalid { x1: f64, y1: f64, x2: f64, y2: f64 },
}

/// Axis-aligned rectangle `(x1, y1)`–`(x2, y2)` in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    /// Builds a box without validation. Use [`BBox::try_new`] for untrusted input.
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn try_new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        let b = Self { x1, y1, x2, y2 };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(GeometryError::Invalid { x1, y1, x2, y2 })
        }
    }

    /// Box of the given size centered at `(cx, cy)`.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn is_valid(&self) -> bool {
        [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite()) && self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn scale(&self, sx: f64, sy: f64) -> Self {
        Self::new(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)
    }

    /// True when the box lies within `[0, width] x [0, height]`.
    pub fn is_inside(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    fn has_positive_size(&self) -> bool {
        self.width() > 0.0 && self.height() > 0.0
    }
}

/// Parameterized offset of a box relative to a reference box.
///
/// `tx`, `ty` are center shifts in units of the reference width/height;
/// `tw`, `th` are natural-log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl BoxDelta {
    pub const fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        Self { tx, ty, tw, th }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

pub fn area(b: &BBox) -> f64 {
    b.width().max(0.0) * b.height().max(0.0)
}

fn intersection(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn encode_delta(anchor: &BBox, target: &BBox) -> Result<BoxDelta, GeometryError> {
    if !anchor.has_positive_size() {
        return Err(GeometryError::Degenerate { bbox: *anchor });
    }
    if !target.has_positive_size() {
        return Err(GeometryError::Degenerate { bbox: *target });
    }
    let (wa, ha) = (anchor.width(), anchor.height());
    let (cxa, cya) = anchor.center();
    let (cxt, cyt) = target.center();
    Ok(BoxDelta {
        tx: (cxt - cxa) / wa,
        ty: (cyt - cya) / ha,
        tw: (target.width() / wa).ln(),
        th: (target.height() / ha).ln(),
    })
}

pub fn decode_delta(anchor: &BBox, delta: &BoxDelta) -> Result<BBox, GeometryError> {
    if !anchor.has_positive_size() {
        return Err(GeometryError::Degenerate { bbox: *anchor });
    }
    if !(delta.tw.abs() <= MAX_LOG_SCALE && delta.th.abs() <= MAX_LOG_SCALE)
        || !delta.tx.is_finite()
        || !delta.ty.is_finite()
    {
        return Err(GeometryError::OutOfRange { tw: delta.tw, th: delta.th });
    }
    let (wa, ha) = (anchor.width(), anchor.height());
    let (cxa, cya) = anchor.center();
    let cx = cxa + delta.tx * wa;
    let cy = cya + delta.ty * ha;
    let w = wa * delta.tw.exp();
    let h = ha * delta.th.exp();
    Ok(BBox::from_center(cx, cy, w, h))
}

/// Clamps every coordinate into `[0, width] x [0, height]`.
pub fn clip_box(b: &BBox, width: f64, height: f64) -> BBox {
    BBox::new(b.x1.clamp(0.0, width), b.y1.clamp(0.0, height), b.x2.clamp(0.0, width), b.y2.clamp(0.0, height))
}
