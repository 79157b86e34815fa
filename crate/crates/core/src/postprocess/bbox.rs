use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Corner-form box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<S> {
    pub x_min: S,
    pub y_min: S,
    pub x_max: S,
    pub y_max: S,
}

/// Center-form box `(cx, cy, w, h)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterBox<S> {
    pub cx: S,
    pub cy: S,
    pub w: S,
    pub h: S,
}

impl<S: Scalar> BBox<S> {
    pub fn new(x_min: S, y_min: S, x_max: S, y_max: S) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> S {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> S {
        self.y_max - self.y_min
    }

    /// Zero for inverted boxes.
    pub fn area(&self) -> f64 {
        let w = (self.x_max.as_f64() - self.x_min.as_f64()).max(0.0);
        let h = (self.y_max.as_f64() - self.y_min.as_f64()).max(0.0);
        w * h
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn clip(&self, width: f64, height: f64) -> Self {
        let c = |v: S, hi: f64| S::from_f64_lossy(v.as_f64().clamp(0.0, hi));
        Self {
            x_min: c(self.x_min, width),
            y_min: c(self.y_min, height),
            x_max: c(self.x_max, width),
            y_max: c(self.y_max, height),
        }
    }

    pub fn to_center(&self) -> CenterBox<S> {
        let two = S::one() + S::one();
        CenterBox {
            cx: (self.x_min + self.x_max) / two,
            cy: (self.y_min + self.y_max) / two,
            w: self.width(),
            h: self.height(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> BBox<T> {
        let c = |v: S| T::from_f64_lossy(v.as_f64());
        BBox::new(c(self.x_min), c(self.y_min), c(self.x_max), c(self.y_max))
    }
}

impl<S: Scalar> CenterBox<S> {
    pub fn new(cx: S, cy: S, w: S, h: S) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn to_corners(&self) -> BBox<S> {
        let two = S::one() + S::one();
        BBox {
            x_min: self.cx - self.w / two,
            y_min: self.cy - self.h / two,
            x_max: self.cx + self.w / two,
            y_max: self.cy + self.h / two,
        }
    }
}

/// Intersection over union, computed in `f64`. Returns 0 when the union is empty.
pub fn iou<S: Scalar>(a: &BBox<S>, b: &BBox<S>) -> f64 {
    let ix = (a.x_max.as_f64().min(b.x_max.as_f64()) - a.x_min.as_f64().max(b.x_min.as_f64())).max(0.0);
    let iy = (a.y_max.as_f64().min(b.y_max.as_f64()) - a.y_min.as_f64().max(b.y_min.as_f64())).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_cases() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
        let b = BBox::new(1.0f64, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        let point = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&point, &point), 0.0);
    }

    #[test]
    fn center_round_trip_and_clip() {
        let b = BBox::new(1.0f32, 2.0, 5.0, 10.0);
        assert_eq!(b.to_center().to_corners(), b);
        let c = BBox::new(-3.0f32, 4.0, 400.0, 500.0).clip(320.0, 320.0);
        assert_eq!(c, BBox::new(0.0, 4.0, 320.0, 320.0));
    }
}
