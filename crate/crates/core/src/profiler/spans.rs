use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timed pipeline stages. `Total` is the wall time of the whole inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Backbone,
    ArmHead,
    Tcb,
    OdmHead,
    Decode,
    ArmFilter,
    Nms,
    Total,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Backbone,
        Stage::ArmHead,
        Stage::Tcb,
        Stage::OdmHead,
        Stage::Decode,
        Stage::ArmFilter,
        Stage::Nms,
        Stage::Total,
    ];

    /// Every stage except `Total`.
    pub const SPANS: [Stage; 7] = [
        Stage::Backbone,
        Stage::ArmHead,
        Stage::Tcb,
        Stage::OdmHead,
        Stage::Decode,
        Stage::ArmFilter,
        Stage::Nms,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Backbone => "backbone",
            Stage::ArmHead => "arm_head",
            Stage::Tcb => "tcb",
            Stage::OdmHead => "odm_head",
            Stage::Decode => "decode",
            Stage::ArmFilter => "arm_filter",
            Stage::Nms => "nms",
            Stage::Total => "total",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::invalid("stage", format!("unknown stage `{s}`")))
    }
}

/// Accumulates wall time per stage for one inference.
#[derive(Debug, Clone)]
pub struct SpanRecorder {
    spans: [Duration; 8],
    enabled: bool,
}

impl Default for SpanRecorder {
    fn default() -> Self {
        Self::new()
    }
}

impl SpanRecorder {
    pub fn new() -> Self {
        Self {
            spans: [Duration::ZERO; 8],
            enabled: true,
        }
    }

    /// A recorder that runs closures without reading the clock.
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        if !self.enabled {
            return f();
        }
        let start = Instant::now();
        let out = f();
        self.spans[stage.index()] += start.elapsed();
        out
    }

    pub fn add(&mut self, stage: Stage, d: Duration) {
        if self.enabled {
            self.spans[stage.index()] += d;
        }
    }

    pub fn get(&self, stage: Stage) -> Duration {
        self.spans[stage.index()]
    }

    pub fn clear(&mut self) {
        self.spans = [Duration::ZERO; 8];
    }

    /// Per-stage milliseconds in [`Stage::ALL`] order.
    pub fn millis(&self) -> [f64; 8] {
        self.spans.map(|d| d.as_secs_f64() * 1e3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("gpu".parse::<Stage>().is_err());
    }

    #[test]
    fn recorder_accumulates() {
        let mut r = SpanRecorder::new();
        r.add(Stage::Nms, Duration::from_millis(3));
        r.add(Stage::Nms, Duration::from_millis(4));
        assert_eq!(r.get(Stage::Nms), Duration::from_millis(7));
        assert_eq!(r.time(Stage::Decode, || 5), 5);
        r.clear();
        assert_eq!(r.millis(), [0.0; 8]);

        let mut off = SpanRecorder::disabled();
        off.add(Stage::Nms, Duration::from_millis(3));
        assert_eq!(off.get(Stage::Nms), Duration::ZERO);
    }
}
