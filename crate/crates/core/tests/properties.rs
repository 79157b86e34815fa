use proptest::prelude::*;
use refinedet_core::config::{parse, serialize};
use refinedet_core::eval::{map_at, GroundTruth, GroundTruthSet};
use refinedet_core::fixtures::table_specs;
use refinedet_core::postprocess::{iou, nms_greedy, nms_greedy_with, BBox, CandidateCap, Detection, DetectionRecord, NmsParams};

fn det_strategy() -> impl Strategy<Value = Detection<f64>> {
    (0.0..100.0f64, 0.0..100.0f64, 2.0..40.0f64, 2.0..40.0f64, 0.0..1.0f64, 0..3usize).prop_map(
        |(x, y, w, h, score, class_id)| Detection {
            bbox: BBox::new(x, y, x + w, y + h),
            score,
            class_id,
        },
    )
}

fn dets() -> impl Strategy<Value = Vec<Detection<f64>>> {
    prop::collection::vec(det_strategy(), 0..60)
}

proptest! {
    #[test]
    fn kept_boxes_do_not_overlap_within_class(d in dets(), t in 0.2..0.8f64) {
        let out = nms_greedy(&d, t, &NmsParams::new(100, 100, 0.0));
        for (i, a) in out.detections.iter().enumerate() {
            for b in &out.detections[i + 1..] {
                if a.class_id == b.class_id {
                    prop_assert!(iou(&a.bbox, &b.bbox) <= t);
                }
            }
        }
    }

    #[test]
    fn raising_conf_thresh_gives_a_subset(d in dets(), lo in 0.0..0.5f64, step in 0.0..0.5f64) {
        let a = nms_greedy(&d, 0.45, &NmsParams::new(1000, 1000, lo));
        let b = nms_greedy(&d, 0.45, &NmsParams::new(1000, 1000, lo + step));
        for i in &b.indices {
            prop_assert!(a.indices.contains(i));
        }
    }

    #[test]
    fn iou_work_grows_with_max_input(d in dets(), m in 1..30usize, extra in 0..30usize) {
        let small = nms_greedy(&d, 0.45, &NmsParams::new(m, m, 0.0));
        let large = nms_greedy(&d, 0.45, &NmsParams::new(m + extra, m, 0.0));
        prop_assert!(small.stats.iou_evaluations <= large.stats.iou_evaluations);
    }

    #[test]
    fn per_image_cap_bounds_candidates(d in dets(), m in 1..40usize) {
        let params = NmsParams::new(m, m, 0.0);
        let out = nms_greedy_with(&d, 0.45, &params, CandidateCap::PerImage);
        prop_assert!(out.stats.candidates <= m);
        let per_class = nms_greedy_with(&d, 0.45, &params, CandidateCap::PerClass);
        prop_assert!(out.stats.candidates <= per_class.stats.candidates);
    }

    #[test]
    fn output_is_sorted_and_capped(d in dets(), m in 1..20usize) {
        let out = nms_greedy(&d, 0.45, &NmsParams::new(50, m, 0.0));
        prop_assert!(out.detections.len() <= m);
        prop_assert!(out.detections.windows(2).all(|w| w[0].score >= w[1].score));
    }
}

fn gt_set(boxes: &[[f64; 4]]) -> GroundTruthSet {
    let mut g = GroundTruthSet::new(1);
    for b in boxes {
        g.add(0, GroundTruth { bbox: BBox::new(b[0], b[1], b[0] + b[2], b[1] + b[3]), class_id: 0, ignore: false })
            .unwrap();
    }
    g
}

fn record(b: [f64; 4], score: f64) -> DetectionRecord {
    DetectionRecord { image_id: 0, class_id: 0, xywh: b, score }
}

#[test]
fn shifted_box_matches_at_half_but_not_seven_tenths() {
    // 20x20 box shifted by 5: IoU = 300 / 500 = 0.6.
    let g = gt_set(&[[0.0, 0.0, 20.0, 20.0]]);
    let d = [record([5.0, 0.0, 20.0, 20.0], 0.9)];
    assert_eq!(map_at(&d, &g, 0.5), Some(1.0));
    assert_eq!(map_at(&d, &g, 0.7), Some(0.0));
}

proptest! {
    #[test]
    fn low_scoring_false_positive_never_helps(
        boxes in prop::collection::vec((0.0..200.0f64, 0.0..200.0f64, 10.0..40.0f64, 10.0..40.0f64), 1..6),
        jitter in prop::collection::vec(-4.0..4.0f64, 24),
        scores in prop::collection::vec(0.2..1.0f64, 6),
    ) {
        let b: Vec<[f64; 4]> = boxes.iter().map(|&(x, y, w, h)| [x, y, w, h]).collect();
        let g = gt_set(&b);
        let mut d: Vec<DetectionRecord> = b
            .iter()
            .enumerate()
            .map(|(i, v)| record([v[0] + jitter[4 * i], v[1] + jitter[4 * i + 1], v[2], v[3]], scores[i]))
            .collect();
        let before = map_at(&d, &g, 0.5).unwrap();
        d.push(record([500.0, 500.0, 10.0, 10.0], 0.1));
        let after = map_at(&d, &g, 0.5).unwrap();
        prop_assert!(after <= before + 1e-12);
    }
}

#[test]
fn fixture_serialization_is_idempotent() {
    for s in table_specs() {
        let once = serialize(&s);
        let twice = serialize(&parse(&once).unwrap());
        assert_eq!(once, twice);
    }
}
