//! Two-branch refinement head: anchor refinement on raw pyramid features,
//! top-down transfer blocks, and multiclass detection on the fused features.

mod anchors;

pub use anchors::{generate_anchors, AnchorGrid, AnchorLevel};

use crate::config::{ModelSpec, HEAD_DEPTHS};
use crate::error::{Error, Result};
use crate::postprocess::Variances;
use crate::scalar::Scalar;
use crate::tensor::{conv2d, deconv2d, elementwise_add, relu, ConvParams, Tensor};
use crate::weights::{Layout, Weights};

pub const L2NORM_INIT_SCALE: f32 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadConfig {
    /// Nominal transfer-block depth, 128 or 256.
    pub tcb_depth: usize,
    /// Actual channel count after the width multiplier.
    pub channels: usize,
    /// Foreground classes; the ODM emits one extra background score.
    pub num_classes: usize,
    pub anchors_per_cell: usize,
    pub variances: Variances,
}

impl HeadConfig {
    pub fn new(tcb_depth: usize, num_classes: usize, anchors_per_cell: usize, variances: Variances) -> Result<Self> {
        if !HEAD_DEPTHS.contains(&tcb_depth) {
            return Err(Error::invalid(
                "head",
                format!("tcb_depth {tcb_depth} not in allowed set {{128, 256}}"),
            ));
        }
        if num_classes == 0 || anchors_per_cell == 0 {
            return Err(Error::invalid("head", "num_classes and anchors_per_cell must be positive"));
        }
        Ok(Self {
            tcb_depth,
            channels: tcb_depth,
            num_classes,
            anchors_per_cell,
            variances,
        })
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let mut cfg = Self::new(
            spec.head_depth,
            spec.num_classes,
            spec.anchors_per_cell(),
            spec.variances.into(),
        )?;
        cfg.channels = spec.width(spec.head_depth);
        Ok(cfg)
    }
}

/// ARM convolutions on the raw pyramid, plus L2 scales for `l2norm_levels`.
pub fn arm_layout(cfg: &HeadConfig, pyramid_channels: [usize; 4], l2norm_levels: &[usize], l: &mut Layout) {
    let a = cfg.anchors_per_cell;
    for &level in l2norm_levels {
        l.vector(&format!("l2norm{level}.scale"), pyramid_channels[level], L2NORM_INIT_SCALE);
    }
    for (level, &c) in pyramid_channels.iter().enumerate() {
        l.conv(&format!("arm.loc{level}"), a * 4, c, 3, true);
        l.conv(&format!("arm.conf{level}"), a * 2, c, 3, true);
    }
}

/// Transfer blocks: lateral 3x3, 2x2 stride-2 deconvolution from the level
/// above (absent at the top), smoothing 3x3.
pub fn tcb_layout(cfg: &HeadConfig, lateral_channels: [usize; 4], l: &mut Layout) {
    let c = cfg.channels;
    for (level, &c_lat) in lateral_channels.iter().enumerate() {
        l.conv(&format!("tcb{level}.lateral"), c, c_lat, 3, true);
        if level + 1 < lateral_channels.len() {
            l.deconv(&format!("tcb{level}.up"), c, c, 2);
        }
        l.conv(&format!("tcb{level}.smooth"), c, c, 3, true);
    }
}

pub fn odm_layout(cfg: &HeadConfig, l: &mut Layout) {
    let a = cfg.anchors_per_cell;
    for level in 0..4 {
        l.conv(&format!("odm.loc{level}"), a * 4, cfg.channels, 3, true);
        l.conv(&format!("odm.conf{level}"), a * (cfg.num_classes + 1), cfg.channels, 3, true);
    }
}

fn conv3<S: Scalar>(w: &Weights<S>, name: &str, x: &Tensor<S>) -> Result<Tensor<S>> {
    let bias = match w.get(&format!("{name}.bias")) {
        Some(b) => b.data(),
        None => &[],
    };
    conv2d(x, w.require(&format!("{name}.weight"))?, bias, ConvParams::same(3))
}

/// Fuses one pyramid level with the already fused level above it.
///
/// `out = relu(smooth(relu(relu(lateral_conv(x)) + up(top_down))))`; without
/// `top_down` the addition is skipped.
pub fn tcb_fuse<S: Scalar>(
    lateral: &Tensor<S>,
    top_down: Option<&Tensor<S>>,
    w: &Weights<S>,
    level: usize,
) -> Result<Tensor<S>> {
    let mut p = relu(&conv3(w, &format!("tcb{level}.lateral"), lateral)?);
    if let Some(top) = top_down {
        let up = deconv2d(
            top,
            w.require(&format!("tcb{level}.up.weight"))?,
            ConvParams::new(2, 2).stride(2),
        )?;
        if (up.height(), up.width()) != (p.height(), p.width()) {
            return Err(Error::invalid(
                "tcb_fuse",
                format!(
                    "upsampled top-down map is {}x{} but lateral map is {}x{}",
                    up.height(),
                    up.width(),
                    p.height(),
                    p.width()
                ),
            ));
        }
        p = relu(&elementwise_add(&p, &up)?);
    }
    Ok(relu(&conv3(w, &format!("tcb{level}.smooth"), &p)?))
}

/// Per-image flat outputs of one head branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput<S> {
    /// `per_anchor_scores` values per anchor.
    pub scores: Vec<Vec<S>>,
    /// Four values per anchor.
    pub deltas: Vec<Vec<S>>,
}

/// Appends `(n, a * k, h, w)` head maps to per-image buffers in
/// (row, column, anchor) order.
fn flatten_into<S: Scalar>(map: &Tensor<S>, k: usize, out: &mut [Vec<S>]) {
    let [n, _, h, w] = map.shape();
    let a = map.channels() / k;
    for (img, buf) in out.iter_mut().enumerate().take(n) {
        for y in 0..h {
            for x in 0..w {
                for ai in 0..a {
                    for j in 0..k {
                        buf.push(map.at(img, ai * k + j, y, x));
                    }
                }
            }
        }
    }
}

fn branch_forward<S: Scalar>(
    op: &'static str,
    features: &[Tensor<S>; 4],
    w: &Weights<S>,
    grid: &AnchorGrid,
    prefix: &str,
    score_width: usize,
) -> Result<BranchOutput<S>> {
    if grid.levels.len() != features.len() {
        return Err(Error::shape(op, "pyramid level count", grid.levels.len(), features.len()));
    }
    let n = features[0].batch();
    let mut scores = vec![Vec::with_capacity(grid.len() * score_width); n];
    let mut deltas = vec![Vec::with_capacity(grid.len() * 4); n];
    for (level, (f, lv)) in features.iter().zip(&grid.levels).enumerate() {
        if f.batch() != n {
            return Err(Error::shape(op, "batch", n, f.batch()));
        }
        if (f.height(), f.width()) != (lv.grid_h, lv.grid_w) {
            return Err(Error::invalid(
                op,
                format!(
                    "level {level} feature map is {}x{} but the anchor grid is {}x{}",
                    f.height(),
                    f.width(),
                    lv.grid_h,
                    lv.grid_w
                ),
            ));
        }
        let loc = conv3(w, &format!("{prefix}.loc{level}"), f)?;
        let conf = conv3(w, &format!("{prefix}.conf{level}"), f)?;
        let a = lv.anchors_per_cell;
        if loc.channels() != a * 4 || conf.channels() != a * score_width {
            return Err(Error::invalid(
                op,
                format!("level {level} head channels do not match {a} anchors per cell"),
            ));
        }
        flatten_into(&loc, 4, &mut deltas);
        flatten_into(&conf, score_width, &mut scores);
    }
    Ok(BranchOutput { scores, deltas })
}

/// Objectness logits (background, object) and first-step deltas per anchor.
pub fn arm_forward<S: Scalar>(pyramid: &[Tensor<S>; 4], w: &Weights<S>, grid: &AnchorGrid) -> Result<BranchOutput<S>> {
    branch_forward("arm_forward", pyramid, w, grid, "arm", 2)
}

/// `num_classes + 1` class logits (background first) and second-step deltas
/// per anchor.
pub fn odm_forward<S: Scalar>(
    fused: &[Tensor<S>; 4],
    w: &Weights<S>,
    grid: &AnchorGrid,
    num_classes: usize,
) -> Result<BranchOutput<S>> {
    branch_forward("odm_forward", fused, w, grid, "odm", num_classes + 1)
}
