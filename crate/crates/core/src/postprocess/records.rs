//! Line-delimited detection records:
//! `image_id,class_id,x_min,y_min,width,height,score`.

use std::io::{BufRead, Write};

use super::nms::Detection;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub class_id: usize,
    /// `x_min, y_min, width, height`.
    pub xywh: [f64; 4],
    pub score: f64,
}

impl DetectionRecord {
    pub fn from_detection<S: Scalar>(image_id: u64, d: &Detection<S>) -> Self {
        let b = d.bbox.cast::<f64>();
        Self {
            image_id,
            class_id: d.class_id,
            xywh: [b.x_min, b.y_min, b.x_max - b.x_min, b.y_max - b.y_min],
            score: d.score.as_f64(),
        }
    }
}

/// Splits one record line into its seven fields, reporting the line number on error.
pub(crate) fn parse_fields(line: &str, line_no: usize, what: &'static str) -> Result<(u64, usize, [f64; 4], f64)> {
    let bad = |msg: String| Error::Format {
        what,
        msg: format!("line {line_no}: {msg}"),
    };
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != 7 {
        return Err(bad(format!("expected 7 comma-separated fields, found {}", f.len())));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("`{s}` is not a number")));
    let image_id = f[0].parse().map_err(|_| bad(format!("bad image_id `{}`", f[0])))?;
    let class_id = f[1].parse().map_err(|_| bad(format!("bad class_id `{}`", f[1])))?;
    let xywh = [num(f[2])?, num(f[3])?, num(f[4])?, num(f[5])?];
    if xywh.iter().any(|v| !v.is_finite()) || xywh[2] <= 0.0 || xywh[3] <= 0.0 {
        return Err(bad("box must be finite with positive width and height".into()));
    }
    Ok((image_id, class_id, xywh, num(f[6])?))
}

pub fn write_detection_records(mut w: impl Write, records: &[DetectionRecord]) -> Result<()> {
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.image_id, r.class_id, r.xywh[0], r.xywh[1], r.xywh[2], r.xywh[3], r.score
        )?;
    }
    Ok(())
}

/// Reads records, skipping blank lines and `#` comments.
pub fn read_detection_records(r: impl BufRead) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (image_id, class_id, xywh, score) = parse_fields(t, i + 1, "detection records")?;
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Format {
                what: "detection records",
                msg: format!("line {}: score {score} outside [0, 1]", i + 1),
            });
        }
        out.push(DetectionRecord {
            image_id,
            class_id,
            xywh,
            score,
        });
    }
    Ok(out)
}
