//! COCO-style average precision.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::BufRead;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::postprocess::records::parse_fields;
use crate::postprocess::{iou, BBox, DetectionRecord};

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BBox<f64>,
    pub class_id: usize,
    /// Ignored boxes neither count as positives nor turn matches into false
    /// positives.
    pub ignore: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    num_classes: usize,
    images: BTreeMap<u64, Vec<GroundTruth>>,
}

fn record_box(xywh: [f64; 4]) -> BBox<f64> {
    BBox::new(xywh[0], xywh[1], xywh[0] + xywh[2], xywh[1] + xywh[3])
}

impl GroundTruthSet {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            images: BTreeMap::new(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Registers an image, possibly with no boxes.
    pub fn add_image(&mut self, image_id: u64) {
        self.images.entry(image_id).or_default();
    }

    pub fn add(&mut self, image_id: u64, gt: GroundTruth) -> Result<()> {
        if !gt.bbox.is_valid() {
            return Err(Error::invalid("ground truth", format!("invalid box {:?}", gt.bbox)));
        }
        if gt.class_id >= self.num_classes {
            return Err(Error::invalid(
                "ground truth",
                format!("class {} outside 0..{}", gt.class_id, self.num_classes),
            ));
        }
        self.images.entry(image_id).or_default().push(gt);
        Ok(())
    }

    pub fn image_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.images.keys().copied()
    }

    pub fn boxes(&self, image_id: u64) -> &[GroundTruth] {
        self.images.get(&image_id).map_or(&[], Vec::as_slice)
    }

    /// Non-ignored boxes of `class_id` over all images.
    pub fn positives(&self, class_id: usize) -> usize {
        self.images
            .values()
            .flatten()
            .filter(|g| g.class_id == class_id && !g.ignore)
            .count()
    }

    /// Reads `image_id,class_id,x_min,y_min,width,height,ignore` lines, where
    /// `ignore` is 0 or 1. Blank lines and `#` comments are skipped.
    pub fn read_from(r: impl BufRead, num_classes: usize) -> Result<Self> {
        let mut set = Self::new(num_classes);
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (image_id, class_id, xywh, flag) = parse_fields(t, i + 1, "ground truth")?;
            let ignore = match flag {
                f if f == 0.0 => false,
                f if f == 1.0 => true,
                f => {
                    return Err(Error::Format {
                        what: "ground truth",
                        msg: format!("line {}: ignore flag must be 0 or 1, got {f}", i + 1),
                    })
                }
            };
            set.add(
                image_id,
                GroundTruth {
                    bbox: record_box(xywh),
                    class_id,
                    ignore,
                },
            )
            .map_err(|e| Error::Format {
                what: "ground truth",
                msg: format!("line {}: {e}", i + 1),
            })?;
        }
        Ok(set)
    }
}

enum Outcome {
    Tp,
    Fp,
    Skip,
}

/// All-point interpolated AP of one class at one IoU threshold. `None` when
/// the class has no non-ignored ground truth.
pub fn average_precision(
    dets: &[DetectionRecord],
    gts: &GroundTruthSet,
    class_id: usize,
    iou_thresh: f64,
) -> Option<f64> {
    let npos = gts.positives(class_id);
    if npos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].class_id == class_id).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut matched: BTreeMap<u64, Vec<bool>> = BTreeMap::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut curve: Vec<(f64, f64)> = Vec::with_capacity(order.len());
    for i in order {
        let d = &dets[i];
        let bbox = record_box(d.xywh);
        let boxes = gts.boxes(d.image_id);
        let used = matched.entry(d.image_id).or_insert_with(|| vec![false; boxes.len()]);
        let mut best: Option<(usize, f64)> = None;
        let mut hits_ignored = false;
        for (j, g) in boxes.iter().enumerate() {
            if g.class_id != class_id {
                continue;
            }
            let o = iou(&bbox, &g.bbox);
            if o < iou_thresh {
                continue;
            }
            if g.ignore {
                hits_ignored = true;
            } else if !used[j] && best.map_or(true, |(_, b)| o > b) {
                best = Some((j, o));
            }
        }
        let outcome = match best {
            Some((j, _)) => {
                used[j] = true;
                Outcome::Tp
            }
            None if hits_ignored => Outcome::Skip,
            None => Outcome::Fp,
        };
        match outcome {
            Outcome::Tp => tp += 1,
            Outcome::Fp => fp += 1,
            Outcome::Skip => continue,
        }
        curve.push((tp as f64 / npos as f64, tp as f64 / (tp + fp) as f64));
    }

    // Precision envelope from the right, then sum over recall steps.
    for k in (0..curve.len().saturating_sub(1)).rev() {
        curve[k].1 = curve[k].1.max(curve[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in curve {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Mean AP over classes with ground truth at one IoU threshold.
pub fn map_at(dets: &[DetectionRecord], gts: &GroundTruthSet, iou_thresh: f64) -> Option<f64> {
    let aps: Vec<f64> = (0..gts.num_classes())
        .filter_map(|c| {
            let ap = average_precision(dets, gts, c, iou_thresh);
            if ap.is_none() {
                log::debug!("class {c} has no ground truth; skipped");
            }
            ap
        })
        .collect();
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

/// Mean of [`map_at`] over the ten COCO thresholds.
pub fn coco_map(dets: &[DetectionRecord], gts: &GroundTruthSet) -> Result<f64> {
    let per: Vec<Option<f64>> = coco_thresholds().par_iter().map(|&t| map_at(dets, gts, t)).collect();
    let per: Option<Vec<f64>> = per.into_iter().collect();
    match per {
        Some(v) => Ok(v.iter().sum::<f64>() / v.len() as f64),
        None => Err(Error::invalid("coco_map", "no class has ground truth to evaluate")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(image_id: u64, class_id: usize, xywh: [f64; 4], score: f64) -> DetectionRecord {
        DetectionRecord {
            image_id,
            class_id,
            xywh,
            score,
        }
    }

    fn gt_set(boxes: &[(u64, [f64; 4])]) -> GroundTruthSet {
        let mut s = GroundTruthSet::new(1);
        for &(id, xywh) in boxes {
            s.add(
                id,
                GroundTruth {
                    bbox: record_box(xywh),
                    class_id: 0,
                    ignore: false,
                },
            )
            .unwrap();
        }
        s
    }

    #[test]
    fn hand_computed_cases() {
        let gts = gt_set(&[(1, [0.0, 0.0, 10.0, 10.0])]);
        assert_eq!(average_precision(&[det(1, 0, [0.0, 0.0, 10.0, 10.0], 0.9)], &gts, 0, 0.5), Some(1.0));
        assert_eq!(average_precision(&[], &gts, 0, 0.5), Some(0.0));

        let gts = gt_set(&[(1, [0.0, 0.0, 10.0, 10.0]), (1, [50.0, 50.0, 10.0, 10.0])]);
        let dets = [det(1, 0, [0.0, 0.0, 10.0, 10.0], 0.9), det(1, 0, [100.0, 100.0, 5.0, 5.0], 0.8)];
        assert!((average_precision(&dets, &gts, 0, 0.5).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn class_without_ground_truth_is_skipped() {
        let gts = GroundTruthSet::new(2);
        assert_eq!(average_precision(&[], &gts, 1, 0.5), None);
        assert!(coco_map(&[], &gts).is_err());
    }

    #[test]
    fn ignored_ground_truth_is_neutral() {
        let mut gts = gt_set(&[(1, [0.0, 0.0, 10.0, 10.0])]);
        gts.add(
            1,
            GroundTruth {
                bbox: record_box([40.0, 40.0, 10.0, 10.0]),
                class_id: 0,
                ignore: true,
            },
        )
        .unwrap();
        let dets = [det(1, 0, [40.0, 40.0, 10.0, 10.0], 0.95), det(1, 0, [0.0, 0.0, 10.0, 10.0], 0.9)];
        assert_eq!(average_precision(&dets, &gts, 0, 0.5), Some(1.0));
    }

    #[test]
    fn reads_ground_truth_file() {
        let text = "# gt\n1,0,0,0,10,10,0\n2,1,5,5,4,4,1\n";
        let gts = GroundTruthSet::read_from(text.as_bytes(), 2).unwrap();
        assert_eq!(gts.image_ids().collect::<Vec<_>>(), vec![1, 2]);
        assert!(gts.boxes(2)[0].ignore);
        assert!(GroundTruthSet::read_from("1,5,0,0,10,10,0\n".as_bytes(), 2).is_err());
        assert!(GroundTruthSet::read_from("1,0,0,0,10,10,2\n".as_bytes(), 2).is_err());
    }
}
