use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::CenterBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorLevel {
    pub stride: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub anchors_per_cell: usize,
}

impl AnchorLevel {
    pub fn count(&self) -> usize {
        self.grid_h * self.grid_w * self.anchors_per_cell
    }
}

/// Prior boxes ordered by (level, row, column, ratio).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub levels: Vec<AnchorLevel>,
    pub boxes: Vec<CenterBox<f64>>,
}

impl AnchorGrid {
    /// A grid with explicit boxes and no level structure.
    pub fn from_boxes(boxes: Vec<CenterBox<f64>>) -> Self {
        Self {
            levels: Vec::new(),
            boxes,
        }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.levels.iter().map(|l| l.grid_h * l.grid_w).sum()
    }
}

/// One anchor per (cell, ratio) at each level, centered on the cell with
/// `w = scale * sqrt(ratio)` and `h = scale / sqrt(ratio)`.
pub fn generate_anchors(input_size: usize, strides: &[usize], scales: &[f64], ratios: &[f64]) -> Result<AnchorGrid> {
    const OP: &str = "generate_anchors";
    if strides.len() != scales.len() {
        return Err(Error::shape(OP, "scale count", strides.len(), scales.len()));
    }
    if ratios.is_empty() || ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::invalid(OP, "ratios must be non-empty and positive"));
    }
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid(OP, "scales must be positive"));
    }
    let mut levels = Vec::with_capacity(strides.len());
    let mut boxes = Vec::new();
    for (&stride, &scale) in strides.iter().zip(scales) {
        if stride == 0 || input_size % stride != 0 {
            return Err(Error::invalid(
                OP,
                format!("input size {input_size} is not divisible by stride {stride}"),
            ));
        }
        let g = input_size / stride;
        levels.push(AnchorLevel {
            stride,
            grid_h: g,
            grid_w: g,
            anchors_per_cell: ratios.len(),
        });
        let s = stride as f64;
        for i in 0..g {
            for j in 0..g {
                for &r in ratios {
                    let k = r.sqrt();
                    boxes.push(CenterBox::new((j as f64 + 0.5) * s, (i as f64 + 0.5) * s, scale * k, scale / k));
                }
            }
        }
    }
    Ok(AnchorGrid { levels, boxes })
}

#[cfg(test)]
mod tests {
    use super::*;

    const STRIDES: [usize; 4] = [8, 16, 32, 64];
    const SCALES: [f64; 4] = [32.0, 64.0, 128.0, 256.0];
    const RATIOS: [f64; 3] = [0.5, 1.0, 2.0];

    #[test]
    fn counts() {
        let g = generate_anchors(320, &STRIDES, &SCALES, &RATIOS).unwrap();
        assert_eq!((g.cells(), g.len()), (2125, 6375));
        let g = generate_anchors(512, &STRIDES, &SCALES, &RATIOS).unwrap();
        assert_eq!((g.cells(), g.len()), (5440, 16320));
        assert_eq!(g.levels.iter().map(AnchorLevel::count).sum::<usize>(), g.len());
    }

    #[test]
    fn ordering_and_geometry() {
        let g = generate_anchors(320, &STRIDES, &SCALES, &RATIOS).unwrap();
        let a = g.boxes[0];
        assert_eq!((a.cx, a.cy), (4.0, 4.0));
        assert!((a.w * a.h - 32.0 * 32.0).abs() < 1e-9);
        assert!((a.h / a.w - 2.0).abs() < 1e-12);
        // Next column starts after three ratios.
        assert_eq!((g.boxes[3].cx, g.boxes[3].cy), (12.0, 4.0));
        // Row 1 of level 0.
        assert_eq!((g.boxes[40 * 3].cx, g.boxes[40 * 3].cy), (4.0, 12.0));
        // First anchor of level 1.
        assert_eq!(g.boxes[4800].cx, 8.0);
        assert!(g.boxes.iter().all(|b| b.cx > 0.0 && b.cx < 320.0 && b.cy < 320.0 && b.w > 0.0));
        assert_eq!(generate_anchors(320, &STRIDES, &SCALES, &RATIOS).unwrap(), g);
    }

    #[test]
    fn rejects_indivisible_input() {
        let err = generate_anchors(300, &STRIDES, &SCALES, &RATIOS).unwrap_err();
        assert!(err.to_string().contains("not divisible by stride 8"));
        assert!(generate_anchors(320, &STRIDES, &SCALES[..2], &RATIOS).is_err());
    }
}
