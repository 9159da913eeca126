use serde::{Deserialize, Serialize};

use crate::{MetricError, MetricKind, MetricScore};

/// Axis-aligned box in image-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, MetricError> {
        let b = Self { x_min, y_min, x_max, y_max };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(MetricError::InvalidBox(b))
        }
    }

    /// Builds a box from two corners given in any order.
    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            x_min: x0.min(x1),
            y_min: y0.min(y1),
            x_max: x0.max(x1),
            y_max: y0.max(y1),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min <= self.x_max && self.y_min <= self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    pub fn intersection_area(&self, other: &Self) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union. A zero-area union scores 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> MetricScore {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    let value = if union > 0.0 { inter / union } else { 0.0 };
    MetricScore::new(MetricKind::Iou, value)
        .with("intersection", inter)
        .with("union", union)
}
