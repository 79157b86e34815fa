use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spans::Stage;
use crate::error::{Error, Result};
use crate::postprocess::NmsParams;

/// Relative gap between the summed stage means and the total mean above
/// which a report is flagged.
pub const SPAN_TOLERANCE: f64 = 0.02;

pub const TIMING_BOUNDARY: &str =
    "timings cover tensor-in to detections-out; image file decode and resizing are excluded";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: Stage,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub host: String,
    pub threads: usize,
    pub timing_boundary: String,
}

impl Environment {
    pub fn detect() -> Self {
        let host = std::fs::read_to_string("/proc/sys/kernel/hostname")
            .map(|s| s.trim().to_string())
            .ok()
            .or_else(|| std::env::var("HOSTNAME").ok())
            .unwrap_or_else(|| "unknown".to_string());
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self {
            host,
            threads,
            timing_boundary: TIMING_BOUNDARY.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileReport {
    pub model: String,
    pub nms: Option<NmsParams>,
    /// One entry per [`Stage::ALL`], in that order.
    pub stages: Vec<StageStats>,
    pub fps: f64,
    pub runs: usize,
    pub warmup_discarded: usize,
    /// `|sum of span means - total mean| / total mean`.
    pub span_discrepancy: f64,
    pub span_flagged: bool,
    /// Mean IoU evaluations per timed run.
    pub iou_evaluations: f64,
    /// Detections returned by the last timed run.
    pub detections: usize,
    /// Combined digest of every timed run's detections.
    pub detection_digest: u64,
    pub environment: Environment,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl ProfileReport {
    /// Builds a report from per-run millisecond samples in [`Stage::ALL`]
    /// order, discarding the first `warmup` runs.
    pub fn from_samples(
        model: impl Into<String>,
        nms: Option<NmsParams>,
        samples: &[[f64; 8]],
        warmup: usize,
        environment: Environment,
    ) -> Result<Self> {
        if samples.len() <= warmup {
            return Err(Error::invalid(
                "benchmark",
                format!("run count {} must exceed warmup {warmup}", samples.len()),
            ));
        }
        let timed = &samples[warmup..];
        let stages: Vec<StageStats> = Stage::ALL
            .iter()
            .enumerate()
            .map(|(i, &stage)| {
                let col: Vec<f64> = timed.iter().map(|s| s[i]).collect();
                let (mean_ms, std_ms) = mean_std(&col);
                StageStats {
                    stage,
                    mean_ms,
                    std_ms,
                    samples: timed.len(),
                }
            })
            .collect();
        let total = stages[7].mean_ms;
        if !(total > 0.0) {
            return Err(Error::Invariant("total stage mean is not positive".into()));
        }
        let span_sum: f64 = stages[..7].iter().map(|s| s.mean_ms).sum();
        let span_discrepancy = (span_sum - total).abs() / total;
        Ok(Self {
            model: model.into(),
            nms,
            stages,
            fps: 1000.0 / total,
            runs: samples.len(),
            warmup_discarded: warmup,
            span_discrepancy,
            span_flagged: span_discrepancy > SPAN_TOLERANCE,
            iou_evaluations: 0.0,
            detections: 0,
            detection_digest: 0,
            environment,
        })
    }

    pub fn stage(&self, stage: Stage) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn mean_ms(&self, stage: Stage) -> f64 {
        self.stage(stage).map_or(0.0, |s| s.mean_ms)
    }

    pub fn total_ms(&self) -> f64 {
        self.mean_ms(Stage::Total)
    }

    /// Share of the total taken by `stage`.
    pub fn share(&self, stage: Stage) -> f64 {
        self.mean_ms(stage) / self.total_ms()
    }

    /// Zeroes every wall-clock dependent field and the host name so that
    /// reports from identical inputs compare byte-for-byte.
    pub fn strip_timings(&mut self) {
        for s in &mut self.stages {
            s.mean_ms = 0.0;
            s.std_ms = 0.0;
        }
        self.fps = 0.0;
        self.span_discrepancy = 0.0;
        self.span_flagged = false;
        self.environment.host = String::new();
        self.environment.threads = 0;
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// One stage per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,mean_ms,std_ms,samples\n");
        for s in &self.stages {
            let _ = writeln!(out, "{},{:.6},{:.6},{}", s.stage, s.mean_ms, s.std_ms, s.samples);
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {}", self.environment.timing_boundary);
        let _ = writeln!(out, "model: {}", self.model);
        if let Some(nms) = self.nms {
            let _ = writeln!(out, "nms: {nms}");
        }
        let _ = writeln!(
            out,
            "host: {} ({} threads)",
            self.environment.host, self.environment.threads
        );
        let _ = writeln!(out, "runs: {} (warm-up discarded: {})", self.runs, self.warmup_discarded);
        let _ = writeln!(out, "{:<12} {:>12} {:>12} {:>8}", "stage", "mean_ms", "std_ms", "share");
        let total = self.total_ms();
        for s in &self.stages {
            let share = if total > 0.0 { s.mean_ms / total * 100.0 } else { 0.0 };
            let _ = writeln!(
                out,
                "{:<12} {:>12.3} {:>12.3} {:>7.1}%",
                s.stage.name(),
                s.mean_ms,
                s.std_ms,
                share
            );
        }
        let _ = writeln!(out, "fps: {:.2}", self.fps);
        let _ = writeln!(out, "iou evaluations per run: {:.1}", self.iou_evaluations);
        let _ = writeln!(out, "detections (last run): {}", self.detections);
        let _ = writeln!(out, "detection digest: {:016x}", self.detection_digest);
        if self.span_flagged {
            let _ = writeln!(
                out,
                "WARNING: stage spans differ from total by {:.1}%",
                self.span_discrepancy * 100.0
            );
        }
        if let Some((stage, frac)) = bottleneck(self) {
            let _ = writeln!(out, "bottleneck: {stage} ({:.1}% of total)", frac * 100.0);
        }
        out
    }
}

/// Each fps divided by the largest; the largest maps to exactly 1.0.
pub fn normalize_fps(fps: &[f64]) -> Result<Vec<f64>> {
    if fps.is_empty() {
        return Err(Error::invalid("normalize_fps", "empty fps list"));
    }
    if let Some(bad) = fps.iter().find(|f| !(f.is_finite() && **f > 0.0)) {
        return Err(Error::invalid("normalize_fps", format!("fps {bad} is not positive")));
    }
    let max = fps.iter().copied().fold(f64::MIN, f64::max);
    Ok(fps.iter().map(|f| if *f == max { 1.0 } else { f / max }).collect())
}

/// The non-total stage with the largest mean and its share of the total.
/// Ties go to the alphabetically first stage name.
pub fn bottleneck(report: &ProfileReport) -> Option<(Stage, f64)> {
    let total = report.total_ms();
    let mut best: Option<&StageStats> = None;
    for s in report.stages.iter().filter(|s| s.stage != Stage::Total) {
        best = match best {
            Some(b) if b.mean_ms > s.mean_ms => Some(b),
            Some(b) if b.mean_ms == s.mean_ms && b.stage.name() < s.stage.name() => Some(b),
            _ => Some(s),
        };
    }
    best.filter(|_| total > 0.0).map(|b| (b.stage, b.mean_ms / total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Environment {
        Environment {
            host: "test".into(),
            threads: 1,
            timing_boundary: TIMING_BOUNDARY.into(),
        }
    }

    fn row(backbone: f64, nms: f64, total: f64) -> [f64; 8] {
        [backbone, 0.0, 0.0, 0.0, 0.0, 0.0, nms, total]
    }

    #[test]
    fn sample_count_and_fps() {
        let samples = vec![row(10.0, 40.0, 50.0); 110];
        let r = ProfileReport::from_samples("m", None, &samples, 10, env()).unwrap();
        assert_eq!(r.stage(Stage::Nms).unwrap().samples, 100);
        assert_eq!(r.fps, 20.0);
        assert!(!r.span_flagged);
        assert_eq!(bottleneck(&r), Some((Stage::Nms, 0.8)));
    }

    #[test]
    fn rejects_too_few_runs() {
        assert!(ProfileReport::from_samples("m", None, &[row(1.0, 1.0, 2.0); 10], 10, env()).is_err());
    }

    #[test]
    fn tie_goes_to_stage_name_order() {
        let r = ProfileReport::from_samples("m", None, &[row(20.0, 20.0, 40.0)], 0, env()).unwrap();
        assert_eq!(bottleneck(&r), Some((Stage::Backbone, 0.5)));
    }

    #[test]
    fn flags_missing_time() {
        let r = ProfileReport::from_samples("m", None, &[row(10.0, 10.0, 30.0)], 0, env()).unwrap();
        assert!(r.span_flagged);
        assert!(r.to_text().contains("WARNING"));
    }

    #[test]
    fn normalize_cases() {
        assert_eq!(normalize_fps(&[10.0, 20.0]).unwrap(), vec![0.5, 1.0]);
        assert_eq!(normalize_fps(&[7.0]).unwrap(), vec![1.0]);
        assert!(normalize_fps(&[]).is_err());
        assert!(normalize_fps(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let samples: Vec<[f64; 8]> = (0..5).map(|i| row(1.0 / 3.0 + i as f64, 0.1, 7.0 + i as f64)).collect();
        let r = ProfileReport::from_samples("m", Some(NmsParams::new(400, 200, 0.1)), &samples, 1, env()).unwrap();
        assert_eq!(ProfileReport::from_json(&r.to_json().unwrap()).unwrap(), r);
        assert_eq!(r.to_csv().lines().count(), 9);
    }
}
