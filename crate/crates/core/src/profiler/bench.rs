use std::fmt::Write as _;
use std::thread::sleep;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::report::{Environment, ProfileReport};
use super::spans::{SpanRecorder, Stage};
use crate::error::{Error, Result};
use crate::eval::{coco_map, GroundTruthSet};
use crate::postprocess::{DetectionRecord, NmsParams, NmsStats};
use crate::weights::fnv1a64;

/// Result of one single-image inference.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<DetectionRecord>,
    pub stats: NmsStats,
}

impl RunOutcome {
    /// FNV-1a over the little-endian encoding of every record.
    pub fn digest(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.records.len() * 56);
        for r in &self.records {
            bytes.extend(r.image_id.to_le_bytes());
            bytes.extend((r.class_id as u64).to_le_bytes());
            for v in r.xywh.iter().chain([&r.score]) {
                bytes.extend(v.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }
}

/// Anything that can run timed single-image inferences.
pub trait Profiled {
    fn id(&self) -> String;

    fn backbone(&self) -> String;

    /// Runs inference on input `index` (implementations cycle through their
    /// inputs) and records stage spans; `Total` is recorded by the caller.
    fn run_once(&self, index: usize, nms: &NmsParams, spans: &mut SpanRecorder) -> Result<RunOutcome>;
}

/// Runs `runs` single-image inferences and discards the first `warmup`.
pub fn benchmark<P: Profiled + ?Sized>(
    model: &P,
    runs: usize,
    warmup: usize,
    nms: &NmsParams,
) -> Result<ProfileReport> {
    if runs <= warmup {
        return Err(Error::invalid(
            "benchmark",
            format!("run count {runs} must exceed warmup {warmup}"),
        ));
    }
    let mut samples = Vec::with_capacity(runs);
    let mut iou = 0u64;
    let mut digest_bytes = Vec::new();
    let mut last = 0;
    for i in 0..runs {
        let mut spans = SpanRecorder::new();
        let start = Instant::now();
        let outcome = model.run_once(i, nms, &mut spans)?;
        spans.add(Stage::Total, start.elapsed());
        samples.push(spans.millis());
        if i >= warmup {
            iou += outcome.stats.iou_evaluations;
            digest_bytes.extend(outcome.digest().to_le_bytes());
            last = outcome.records.len();
        }
    }
    let mut report = ProfileReport::from_samples(model.id(), Some(*nms), &samples, warmup, Environment::detect())?;
    report.iou_evaluations = iou as f64 / (runs - warmup) as f64;
    report.detections = last;
    report.detection_digest = fnv1a64(&digest_bytes);
    Ok(report)
}

/// Mock model that sleeps for fixed per-stage durations.
#[derive(Debug, Clone)]
pub struct DelayModel {
    pub delays: Vec<(Stage, Duration)>,
    /// Runs with index below this are slowed by `slow_factor`.
    pub slow_runs: usize,
    pub slow_factor: u32,
}

impl DelayModel {
    pub fn new(delays: &[(Stage, Duration)]) -> Self {
        Self {
            delays: delays.to_vec(),
            slow_runs: 0,
            slow_factor: 1,
        }
    }

    pub fn slow_first(mut self, runs: usize, factor: u32) -> Self {
        self.slow_runs = runs;
        self.slow_factor = factor;
        self
    }
}

impl Profiled for DelayModel {
    fn id(&self) -> String {
        "delay-model".to_string()
    }

    fn backbone(&self) -> String {
        "none".to_string()
    }

    fn run_once(&self, index: usize, _nms: &NmsParams, spans: &mut SpanRecorder) -> Result<RunOutcome> {
        let factor = if index < self.slow_runs { self.slow_factor } else { 1 };
        for &(stage, d) in &self.delays {
            spans.time(stage, || sleep(d * factor));
        }
        Ok(RunOutcome::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: String,
    pub backbone: String,
    pub nms: NmsParams,
    pub map: Option<f64>,
    pub fps: f64,
    pub iou_evaluations: f64,
    pub report: ProfileReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn strip_timings(&mut self) {
        for r in &mut self.rows {
            r.fps = 0.0;
            r.report.strip_timings();
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<22} {:<16} {:<20} {:>8} {:>9} {:>14}",
            "model", "backbone", "nms", "mAP", "fps", "iou_evals/run"
        );
        for r in &self.rows {
            let map = r.map.map_or_else(|| "-".to_string(), |m| format!("{:.4}", m));
            let _ = writeln!(
                out,
                "{:<22} {:<16} {:<20} {:>8} {:>9.2} {:>14.1}",
                r.model,
                r.backbone,
                r.nms.to_string(),
                map,
                r.fps,
                r.iou_evaluations
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,backbone,max_input,max_output,conf_thresh,map,fps,iou_evaluations\n");
        for r in &self.rows {
            let map = r.map.map_or_else(String::new, |m| m.to_string());
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.4},{}",
                r.model, r.backbone, r.nms.max_input, r.nms.max_output, r.nms.conf_thresh, map, r.fps, r.iou_evaluations
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One benchmark per NMS triple on identical inputs, plus mAP over the images
/// in `gt` when given.
pub fn compare_sweep<P: Profiled + ?Sized>(
    model: &P,
    triples: &[NmsParams],
    runs: usize,
    warmup: usize,
    gt: Option<&GroundTruthSet>,
) -> Result<SweepTable> {
    if triples.len() < 2 {
        return Err(Error::invalid("sweep", "need at least two NMS triples"));
    }
    let mut rows = Vec::with_capacity(triples.len());
    for nms in triples {
        nms.check()?;
        let report = benchmark(model, runs, warmup, nms)?;
        let map = match gt {
            Some(gt) => {
                let mut records = Vec::new();
                for id in gt.image_ids() {
                    let mut outcome = model.run_once(id as usize, nms, &mut SpanRecorder::disabled())?;
                    outcome.records.iter_mut().for_each(|r| r.image_id = id);
                    records.extend(outcome.records);
                }
                Some(coco_map(&records, gt)?)
            }
            None => None,
        };
        rows.push(SweepRow {
            model: model.id(),
            backbone: model.backbone(),
            nms: *nms,
            map,
            fps: report.fps,
            iou_evaluations: report.iou_evaluations,
            report,
        });
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_counts_and_rejects() {
        let m = DelayModel::new(&[(Stage::Nms, Duration::from_micros(100))]);
        let nms = NmsParams::new(400, 200, 0.1);
        let r = benchmark(&m, 12, 2, &nms).unwrap();
        assert_eq!(r.stage(Stage::Nms).unwrap().samples, 10);
        assert_eq!(r.runs, 12);
        assert!(r.total_ms() >= r.mean_ms(Stage::Nms));
        assert!(benchmark(&m, 2, 2, &nms).is_err());
    }

    #[test]
    fn sweep_needs_two_triples() {
        let m = DelayModel::new(&[(Stage::Backbone, Duration::from_micros(50))]);
        assert!(compare_sweep(&m, &[NmsParams::new(1, 1, 0.5)], 2, 1, None).is_err());
        let t = compare_sweep(&m, &[NmsParams::new(400, 200, 0.1), NmsParams::new(1000, 500, 0.01)], 2, 1, None)
            .unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.to_text().lines().count(), 3);
        assert_eq!(SweepTable::from_json(&t.to_json().unwrap()).unwrap(), t);
    }
}
