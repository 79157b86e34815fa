use super::bbox::{BBox, CenterBox};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Upper bound on a log-scale size delta before exponentiation, `ln(1000 / 16)`.
pub const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variances {
    pub center: f64,
    pub size: f64,
}

impl Default for Variances {
    fn default() -> Self {
        Self {
            center: 0.1,
            size: 0.2,
        }
    }
}

impl From<(f64, f64)> for Variances {
    fn from((center, size): (f64, f64)) -> Self {
        Self { center, size }
    }
}

/// Regression target of `target` relative to `prior`:
/// `((cx - acx) / (vc * aw), (cy - acy) / (vc * ah), ln(w / aw) / vs, ln(h / ah) / vs)`.
pub fn encode<S: Scalar>(prior: &CenterBox<S>, target: &CenterBox<S>, v: Variances) -> [f64; 4] {
    let (acx, acy, aw, ah) = (prior.cx.as_f64(), prior.cy.as_f64(), prior.w.as_f64(), prior.h.as_f64());
    [
        (target.cx.as_f64() - acx) / (v.center * aw),
        (target.cy.as_f64() - acy) / (v.center * ah),
        (target.w.as_f64() / aw).ln() / v.size,
        (target.h.as_f64() / ah).ln() / v.size,
    ]
}

fn apply(prior: (f64, f64, f64, f64), d: [f64; 4], v: Variances) -> (f64, f64, f64, f64) {
    let (acx, acy, aw, ah) = prior;
    (
        acx + d[0] * v.center * aw,
        acy + d[1] * v.center * ah,
        aw * (d[2] * v.size).min(MAX_LOG_SCALE).exp(),
        ah * (d[3] * v.size).min(MAX_LOG_SCALE).exp(),
    )
}

fn check_inputs<S: Scalar, P>(priors: &[P], deltas: &[[S; 4]]) -> Result<()> {
    if priors.len() != deltas.len() {
        return Err(Error::shape("decode", "delta count", priors.len(), deltas.len()));
    }
    if let Some(i) = deltas.iter().position(|d| d.iter().any(|x| !x.is_finite())) {
        return Err(Error::invalid("decode", format!("non-finite delta at index {i}")));
    }
    Ok(())
}

/// Applies deltas to priors, staying in center form (no clipping). Used for
/// the first refinement step.
pub fn refine<S: Scalar>(priors: &[CenterBox<S>], deltas: &[[S; 4]], v: Variances) -> Result<Vec<CenterBox<S>>> {
    check_inputs(priors, deltas)?;
    Ok(priors
        .iter()
        .zip(deltas)
        .map(|(p, d)| {
            let (cx, cy, w, h) = apply(
                (p.cx.as_f64(), p.cy.as_f64(), p.w.as_f64(), p.h.as_f64()),
                d.map(|x| x.as_f64()),
                v,
            );
            CenterBox::new(S::from_f64_lossy(cx), S::from_f64_lossy(cy), S::from_f64_lossy(w), S::from_f64_lossy(h))
        })
        .collect())
}

/// Inverse of [`encode`] producing corner boxes, clipped to `clip = (width, height)`
/// when given.
pub fn decode<S: Scalar>(
    priors: &[CenterBox<S>],
    deltas: &[[S; 4]],
    v: Variances,
    clip: Option<(f64, f64)>,
) -> Result<Vec<BBox<S>>> {
    let boxes = refine(priors, deltas, v)?.into_iter().map(|c| c.to_corners());
    Ok(match clip {
        Some((w, h)) => boxes.map(|b| b.clip(w, h)).collect(),
        None => boxes.collect(),
    })
}
