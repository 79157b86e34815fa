//! Stage-wise latency measurement.

mod bench;
mod report;
mod spans;

pub use bench::{benchmark, compare_sweep, DelayModel, Profiled, RunOutcome, SweepRow, SweepTable};
pub use report::{bottleneck, normalize_fps, Environment, ProfileReport, StageStats, SPAN_TOLERANCE, TIMING_BOUNDARY};
pub use spans::{SpanRecorder, Stage};
