//! Bounding-box algebra for region proposals.
//!
//! Two box representations are used by the region detectors: [`CenterBox`]
//! (center plus size, emitted by the face detector) and [`CornerBox`]
//! (top-left and bottom-right corners, emitted by the hand detector). Both
//! use real-valued pixel coordinates with the y axis growing downward.
//! Rasterization to whole pixels only happens in [`CornerBox::rasterize`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid adjustment delta: {0}")]
    InvalidDelta(String),
    #[error("invalid image extent {width}x{height}")]
    InvalidExtent { width: u32, height: u32 },
    #[error("box does not intersect the image with positive area")]
    EmptyIntersection,
}

/// Box given by its center and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCenterBox")]
pub struct CenterBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

#[derive(Deserialize)]
struct RawCenterBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl TryFrom<RawCenterBox> for CenterBox {
    type Error = GeometryError;

    fn try_from(raw: RawCenterBox) -> Result<Self, Self::Error> {
        CenterBox::new(raw.cx, raw.cy, raw.w, raw.h)
    }
}

impl CenterBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidBox(format!(
                "non-finite center box ({cx}, {cy}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::InvalidBox(format!(
                "center box needs positive size, got w={w} h={h}"
            )));
        }
        Ok(Self { cx, cy, w, h })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    pub fn height(&self) -> f64 {
        self.h
    }

    pub fn to_corner(&self) -> CornerBox {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        CornerBox {
            x1: self.cx - hw,
            y1: self.cy - hh,
            x2: self.cx + hw,
            y2: self.cy + hh,
        }
    }

    /// Face-box adjustment: moves the center down by `delta_v` and widens the
    /// box by `delta_h`. Height is left untouched.
    pub fn adjust_face(&self, d: AdjustmentDeltas) -> CenterBox {
        CenterBox {
            cx: self.cx,
            cy: self.cy + d.delta_v,
            w: self.w + d.delta_h,
            h: self.h,
        }
    }
}

/// Box given by its top-left `(x1, y1)` and bottom-right `(x2, y2)` corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCornerBox")]
pub struct CornerBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Deserialize)]
struct RawCornerBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl TryFrom<RawCornerBox> for CornerBox {
    type Error = GeometryError;

    fn try_from(raw: RawCornerBox) -> Result<Self, Self::Error> {
        CornerBox::new(raw.x1, raw.y1, raw.x2, raw.y2)
    }
}

impl CornerBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeometryError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidBox(format!(
                "non-finite corner box ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        if x1 >= x2 || y1 >= y2 {
            return Err(GeometryError::InvalidBox(format!(
                "corner box needs x1 < x2 and y1 < y2, got ({x1}, {y1}, {x2}, {y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_center(&self) -> CenterBox {
        CenterBox {
            cx: (self.x1 + self.x2) / 2.0,
            cy: (self.y1 + self.y2) / 2.0,
            w: self.x2 - self.x1,
            h: self.y2 - self.y1,
        }
    }

    /// Hand-box adjustment: grows the box symmetrically by `delta_h` on the
    /// left and right and by `delta_v` on the top and bottom. The result may
    /// leave the image; clip it afterwards.
    pub fn expand_hand(&self, d: AdjustmentDeltas) -> CornerBox {
        CornerBox {
            x1: self.x1 - d.delta_h,
            y1: self.y1 - d.delta_v,
            x2: self.x2 + d.delta_h,
            y2: self.y2 + d.delta_v,
        }
    }

    /// Intersects the box with `[0, width] x [0, height]`.
    pub fn clip_to(&self, extent: ImageExtent) -> Result<CornerBox, GeometryError> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(f64::from(extent.width));
        let y2 = self.y2.min(f64::from(extent.height));
        if x1 < x2 && y1 < y2 {
            Ok(CornerBox { x1, y1, x2, y2 })
        } else {
            Err(GeometryError::EmptyIntersection)
        }
    }

    /// True iff `inner` lies within `self` componentwise (boundaries included).
    pub fn contains(&self, inner: &CornerBox) -> bool {
        self.x1 <= inner.x1 && self.y1 <= inner.y1 && inner.x2 <= self.x2 && inner.y2 <= self.y2
    }

    /// Shifts the box by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> CornerBox {
        CornerBox {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    /// Whole-pixel rectangle covering the box: `x1`/`y1` are floored and
    /// `x2`/`y2` ceiled. Negative coordinates saturate at zero, so clip first.
    pub fn rasterize(&self) -> PixelRect {
        let x = self.x1.floor().max(0.0) as u32;
        let y = self.y1.floor().max(0.0) as u32;
        let x2 = self.x2.ceil().max(0.0) as u32;
        let y2 = self.y2.ceil().max(0.0) as u32;
        PixelRect {
            x,
            y,
            width: x2.saturating_sub(x),
            height: y2.saturating_sub(y),
        }
    }
}

impl From<CenterBox> for CornerBox {
    fn from(b: CenterBox) -> Self {
        b.to_corner()
    }
}

impl From<CornerBox> for CenterBox {
    fn from(b: CornerBox) -> Self {
        b.to_center()
    }
}

impl fmt::Display for CornerBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.x1, self.y1, self.x2, self.y2)
    }
}

/// Integer pixel rectangle, `[x, x + width) x [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelRect {
    pub fn to_corner_box(&self) -> Option<CornerBox> {
        CornerBox::new(
            f64::from(self.x),
            f64::from(self.y),
            f64::from(self.x + self.width),
            f64::from(self.y + self.height),
        )
        .ok()
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }
}

/// Pixel amounts used by the face and hand adjustments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjustmentDeltas {
    delta_h: f64,
    delta_v: f64,
}

impl AdjustmentDeltas {
    pub const ZERO: AdjustmentDeltas = AdjustmentDeltas {
        delta_h: 0.0,
        delta_v: 0.0,
    };

    pub fn new(delta_h: f64, delta_v: f64) -> Result<Self, GeometryError> {
        for (name, v) in [("delta_h", delta_h), ("delta_v", delta_v)] {
            if !v.is_finite() || v < 0.0 {
                return Err(GeometryError::InvalidDelta(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self { delta_h, delta_v })
    }

    pub fn delta_h(&self) -> f64 {
        self.delta_h
    }

    pub fn delta_v(&self) -> f64 {
        self.delta_v
    }
}

/// One axis of a delta rule: a fixed pixel amount or a fraction of a box
/// dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaValue {
    Pixels(f64),
    Fraction(f64),
}

impl DeltaValue {
    fn resolve(self, basis: f64) -> f64 {
        match self {
            DeltaValue::Pixels(p) => p,
            DeltaValue::Fraction(f) => f * basis,
        }
    }

    fn validate(self) -> Result<Self, GeometryError> {
        let v = match self {
            DeltaValue::Pixels(v) | DeltaValue::Fraction(v) => v,
        };
        if v.is_finite() && v >= 0.0 {
            Ok(self)
        } else {
            Err(GeometryError::InvalidDelta(format!(
                "delta must be finite and >= 0, got {v}"
            )))
        }
    }
}

impl std::str::FromStr for DeltaValue {
    type Err = GeometryError;

    /// `"12"` or `"12.5"` are pixels, `"25%"` is a fraction of the box size.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| GeometryError::InvalidDelta(format!("cannot parse delta '{s}'")))
        };
        let value = match s.strip_suffix('%') {
            Some(pct) => DeltaValue::Fraction(parse(pct)? / 100.0),
            None => DeltaValue::Pixels(parse(s)?),
        };
        value.validate()
    }
}

impl fmt::Display for DeltaValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaValue::Pixels(p) => write!(f, "{p}"),
            DeltaValue::Fraction(r) => write!(f, "{}%", r * 100.0),
        }
    }
}

/// Per-kind rule that turns a raw box into concrete [`AdjustmentDeltas`].
///
/// For face boxes a horizontal fraction is taken of the box width and a
/// vertical fraction of its height. For hand boxes both fractions are taken
/// of `max(width, height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaRule {
    pub horizontal: DeltaValue,
    pub vertical: DeltaValue,
}

impl DeltaRule {
    pub fn new(horizontal: DeltaValue, vertical: DeltaValue) -> Result<Self, GeometryError> {
        Ok(Self {
            horizontal: horizontal.validate()?,
            vertical: vertical.validate()?,
        })
    }

    pub fn fixed(d: AdjustmentDeltas) -> Self {
        Self {
            horizontal: DeltaValue::Pixels(d.delta_h),
            vertical: DeltaValue::Pixels(d.delta_v),
        }
    }

    pub fn face_default() -> Self {
        Self {
            horizontal: DeltaValue::Fraction(0.25),
            vertical: DeltaValue::Fraction(0.20),
        }
    }

    pub fn hand_default() -> Self {
        Self {
            horizontal: DeltaValue::Fraction(0.15),
            vertical: DeltaValue::Fraction(0.15),
        }
    }

    pub fn resolve_face(&self, b: &CenterBox) -> AdjustmentDeltas {
        AdjustmentDeltas {
            delta_h: self.horizontal.resolve(b.width()),
            delta_v: self.vertical.resolve(b.height()),
        }
    }

    pub fn resolve_hand(&self, b: &CornerBox) -> AdjustmentDeltas {
        let side = b.width().max(b.height());
        AdjustmentDeltas {
            delta_h: self.horizontal.resolve(side),
            delta_v: self.vertical.resolve(side),
        }
    }
}

/// Size of an image in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageExtent {
    width: u32,
    height: u32,
}

impl ImageExtent {
    pub fn new(width: u32, height: u32) -> Result<Self, GeometryError> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidExtent { width, height });
        }
        Ok(Self { width, height })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn full_box(&self) -> CornerBox {
        CornerBox {
            x1: 0.0,
            y1: 0.0,
            x2: f64::from(self.width),
            y2: f64::from(self.height),
        }
    }
}
