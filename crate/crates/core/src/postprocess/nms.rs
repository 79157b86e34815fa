use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bbox::{iou, BBox};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// The post-processing triple: candidate cap entering NMS, cap on kept boxes,
/// and the confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsParams {
    pub max_input: usize,
    pub max_output: usize,
    pub conf_thresh: f64,
}

impl NmsParams {
    pub const fn new(max_input: usize, max_output: usize, conf_thresh: f64) -> Self {
        Self {
            max_input,
            max_output,
            conf_thresh,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.max_output > self.max_input {
            return Err(Error::invalid(
                "nms",
                format!("max_output {} exceeds max_input {}", self.max_output, self.max_input),
            ));
        }
        if !(0.0..=1.0).contains(&self.conf_thresh) {
            return Err(Error::invalid(
                "nms",
                format!("conf_thresh {} outside [0, 1]", self.conf_thresh),
            ));
        }
        Ok(())
    }
}

impl std::fmt::Display for NmsParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.max_input, self.max_output, self.conf_thresh)
    }
}

/// Whether `max_input` caps candidates per class or per image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateCap {
    #[default]
    PerClass,
    PerImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<S> {
    pub bbox: BBox<S>,
    pub score: S,
    pub class_id: usize,
}

pub type DetectionSet<S> = Vec<Detection<S>>;

/// Work counters from one suppression call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NmsStats {
    /// Boxes that entered greedy suppression, over all classes.
    pub candidates: usize,
    /// Largest per-class candidate list.
    pub max_class_candidates: usize,
    pub iou_evaluations: u64,
}

impl NmsStats {
    pub fn merge(&mut self, other: &NmsStats) {
        self.candidates += other.candidates;
        self.max_class_candidates = self.max_class_candidates.max(other.max_class_candidates);
        self.iou_evaluations += other.iou_evaluations;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmsOutput<S> {
    pub detections: DetectionSet<S>,
    /// Input index of every kept detection, aligned with `detections`.
    pub indices: Vec<usize>,
    pub stats: NmsStats,
}

/// Descending score, then ascending index.
fn rank<S: Scalar>(dets: &[Detection<S>], a: usize, b: usize) -> Ordering {
    dets[b]
        .score
        .partial_cmp(&dets[a].score)
        .unwrap_or(Ordering::Equal)
        .then(a.cmp(&b))
}

/// Greedy per-class NMS with the candidate cap applied per class.
pub fn nms_greedy<S: Scalar>(dets: &[Detection<S>], iou_thresh: f64, params: &NmsParams) -> NmsOutput<S> {
    nms_greedy_with(dets, iou_thresh, params, CandidateCap::PerClass)
}

/// Greedy NMS:
/// 1. drop scores below `conf_thresh`;
/// 2. keep the top `max_input` by score (per class or per image);
/// 3. per class, repeatedly keep the best survivor and suppress same-class
///    boxes with IoU above `iou_thresh`;
/// 4. merge, sort by descending score (ties by lower input index) and keep
///    `max_output`.
pub fn nms_greedy_with<S: Scalar>(
    dets: &[Detection<S>],
    iou_thresh: f64,
    params: &NmsParams,
    cap: CandidateCap,
) -> NmsOutput<S> {
    let conf = params.conf_thresh;
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score.as_f64() >= conf)
        .collect();
    order.sort_by(|&a, &b| rank(dets, a, b));
    if cap == CandidateCap::PerImage {
        order.truncate(params.max_input);
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in order {
        by_class.entry(dets[i].class_id).or_default().push(i);
    }

    let mut stats = NmsStats::default();
    let mut kept: Vec<usize> = Vec::new();
    for (_, mut cands) in by_class {
        if cap == CandidateCap::PerClass {
            cands.truncate(params.max_input);
        }
        stats.candidates += cands.len();
        stats.max_class_candidates = stats.max_class_candidates.max(cands.len());
        let mut suppressed = vec![false; cands.len()];
        let mut kept_here = 0;
        for i in 0..cands.len() {
            if suppressed[i] {
                continue;
            }
            // Later survivors can only rank lower, so the class is done once
            // it alone fills the output.
            if kept_here == params.max_output {
                break;
            }
            kept.push(cands[i]);
            kept_here += 1;
            let anchor = &dets[cands[i]].bbox;
            for j in i + 1..cands.len() {
                if suppressed[j] {
                    continue;
                }
                stats.iou_evaluations += 1;
                if iou(anchor, &dets[cands[j]].bbox) > iou_thresh {
                    suppressed[j] = true;
                }
            }
        }
    }

    kept.sort_by(|&a, &b| rank(dets, a, b));
    kept.truncate(params.max_output);
    NmsOutput {
        detections: kept.iter().map(|&i| dets[i]).collect(),
        indices: kept,
        stats,
    }
}
