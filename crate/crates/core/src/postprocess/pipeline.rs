use super::bbox::CenterBox;
use super::codec::{decode, refine, Variances};
use super::nms::{nms_greedy_with, CandidateCap, Detection, DetectionSet, NmsParams, NmsStats};
use crate::config::ModelSpec;
use crate::error::{Error, Result};
use crate::head::AnchorGrid;
use crate::profiler::{SpanRecorder, Stage};
use crate::scalar::Scalar;

/// Per-anchor head outputs for a single image, in anchor-grid order.
#[derive(Debug, Clone, Copy)]
pub struct HeadView<'a, S> {
    /// Two logits per anchor: background, object.
    pub objectness: &'a [S],
    pub arm_deltas: &'a [S],
    /// `num_classes + 1` logits per anchor, background first.
    pub class_scores: &'a [S],
    pub odm_deltas: &'a [S],
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub variances: Variances,
    pub arm_neg_thresh: f64,
    pub nms_iou: f64,
    pub nms: NmsParams,
    pub cap: CandidateCap,
    /// `(width, height)` used for clipping.
    pub image_size: (f64, f64),
}

impl PipelineConfig {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        Self {
            variances: spec.variances.into(),
            arm_neg_thresh: spec.arm_neg_thresh,
            nms_iou: spec.nms_iou,
            nms: spec.nms,
            cap: spec.candidate_cap,
            image_size: (spec.input_size as f64, spec.input_size as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput<S> {
    pub detections: DetectionSet<S>,
    pub stats: NmsStats,
    /// Anchors surviving the ARM negative filter.
    pub arm_kept: usize,
}

/// Row-wise softmax over a flat `rows x width` buffer.
pub fn softmax_rows<S: Scalar>(logits: &[S], width: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(width.max(1)) {
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        let mut sum = 0.0;
        for v in row {
            let e = (v.as_f64() - max).exp();
            sum += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e /= sum);
    }
    out
}

/// Indices of anchors whose background probability does not exceed
/// `neg_thresh`, in input order.
pub fn arm_filter<S: Scalar>(background_prob: &[S], neg_thresh: f64) -> Vec<usize> {
    background_prob
        .iter()
        .enumerate()
        .filter(|(_, p)| p.as_f64() <= neg_thresh)
        .map(|(i, _)| i)
        .collect()
}

fn quad<S: Scalar>(v: &[S], i: usize) -> [f64; 4] {
    [v[4 * i], v[4 * i + 1], v[4 * i + 2], v[4 * i + 3]].map(|x| x.as_f64())
}

/// ARM filter, two-step decode, class softmax, per-class threshold/cap/NMS and
/// the final per-image cap. Stage spans go to `spans`.
pub fn pipeline<S: Scalar>(
    head: &HeadView<'_, S>,
    anchors: &AnchorGrid,
    cfg: &PipelineConfig,
    spans: &mut SpanRecorder,
) -> Result<PipelineOutput<S>> {
    const OP: &str = "pipeline";
    let n = anchors.len();
    let c1 = head.num_classes + 1;
    for (dim, want, got) in [
        ("objectness length", 2 * n, head.objectness.len()),
        ("arm delta length", 4 * n, head.arm_deltas.len()),
        ("class score length", c1 * n, head.class_scores.len()),
        ("odm delta length", 4 * n, head.odm_deltas.len()),
    ] {
        if want != got {
            return Err(Error::shape(OP, dim, want, got));
        }
    }

    let kept = spans.time(Stage::ArmFilter, || {
        let probs = softmax_rows(head.objectness, 2);
        let background: Vec<f64> = probs.chunks(2).map(|p| p[0]).collect();
        arm_filter(&background, cfg.arm_neg_thresh)
    });

    let boxes = spans.time(Stage::Decode, || -> Result<_> {
        let priors: Vec<CenterBox<f64>> = kept.iter().map(|&i| anchors.boxes[i]).collect();
        let arm: Vec<[f64; 4]> = kept.iter().map(|&i| quad(head.arm_deltas, i)).collect();
        let odm: Vec<[f64; 4]> = kept.iter().map(|&i| quad(head.odm_deltas, i)).collect();
        let refined = refine(&priors, &arm, cfg.variances)?;
        decode(&refined, &odm, cfg.variances, Some(cfg.image_size))
    })?;

    let out = spans.time(Stage::Nms, || {
        let mut candidates: Vec<Detection<S>> = Vec::new();
        let conf = cfg.nms.conf_thresh;
        for (k, &i) in kept.iter().enumerate() {
            let bbox = boxes[k];
            if !bbox.is_valid() {
                continue;
            }
            let probs = softmax_rows(&head.class_scores[i * c1..(i + 1) * c1], c1);
            for (c, &p) in probs.iter().enumerate().skip(1) {
                if p >= conf {
                    candidates.push(Detection {
                        bbox: bbox.cast(),
                        score: S::from_f64_lossy(p),
                        class_id: c - 1,
                    });
                }
            }
        }
        nms_greedy_with(&candidates, cfg.nms_iou, &cfg.nms, cfg.cap)
    });

    Ok(PipelineOutput {
        detections: out.detections,
        stats: out.stats,
        arm_kept: kept.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::BBox;

    fn one_anchor_grid() -> AnchorGrid {
        AnchorGrid::from_boxes(vec![CenterBox::new(100.0, 100.0, 40.0, 20.0)])
    }

    fn config(nms: NmsParams) -> PipelineConfig {
        PipelineConfig {
            variances: Variances::default(),
            arm_neg_thresh: 0.99,
            nms_iou: 0.45,
            nms,
            cap: CandidateCap::PerClass,
            image_size: (320.0, 320.0),
        }
    }

    #[test]
    fn arm_filter_cases() {
        assert!(arm_filter(&[1.0f64; 4], 0.99).is_empty());
        assert_eq!(arm_filter(&[0.0f64; 3], 0.99), vec![0, 1, 2]);
        assert_eq!(arm_filter(&[0.995f64, 0.5, 0.999], 0.99), vec![1]);
    }

    #[test]
    fn identity_decode_single_detection() {
        // Three classes; class 2 gets probability 0.95.
        let rest = (0.05f64 / 3.0).ln();
        let logits = [rest, rest, 0.95f64.ln(), rest];
        let head = HeadView {
            objectness: &[0.0f64, 0.0],
            arm_deltas: &[0.0; 4],
            class_scores: &logits,
            odm_deltas: &[0.0; 4],
            num_classes: 3,
        };
        let out = pipeline(&head, &one_anchor_grid(), &config(NmsParams::new(400, 200, 0.1)), &mut SpanRecorder::new())
            .unwrap();
        assert_eq!(out.detections.len(), 1);
        let d = out.detections[0];
        assert_eq!(d.class_id, 1);
        assert!((d.score - 0.95).abs() < 1e-12);
        assert_eq!(d.bbox, BBox::new(80.0, 90.0, 120.0, 110.0));
    }

    #[test]
    fn below_threshold_is_empty() {
        let head = HeadView {
            objectness: &[0.0f32, 0.0],
            arm_deltas: &[0.0; 4],
            class_scores: &[0.0f32; 81],
            odm_deltas: &[0.0; 4],
            num_classes: 80,
        };
        let out = pipeline(&head, &one_anchor_grid(), &config(NmsParams::new(400, 200, 0.1)), &mut SpanRecorder::new())
            .unwrap();
        assert!(out.detections.is_empty());
    }

    #[test]
    fn rejects_length_mismatch() {
        let head = HeadView {
            objectness: &[0.0f32, 0.0],
            arm_deltas: &[0.0; 3],
            class_scores: &[0.0f32; 3],
            odm_deltas: &[0.0; 4],
            num_classes: 2,
        };
        let err = pipeline(&head, &one_anchor_grid(), &config(NmsParams::new(1, 1, 0.1)), &mut SpanRecorder::new())
            .unwrap_err();
        assert!(err.to_string().contains("arm delta length"));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = softmax_rows(&[1.0f32, 2.0, 3.0, -1.0, 0.0, 1000.0], 3);
        assert!((p[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[5] - 1.0).abs() < 1e-12);
    }
}
