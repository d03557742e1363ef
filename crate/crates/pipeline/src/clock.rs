//! Time bases for node scheduling.

use std::time::Instant;

use serde::{Deserialize, Serialize};

/// How nodes measure time.
///
/// In [`Timing::Logical`] mode every time is derived from message contents:
/// a measurement reaches hop `h` at `timestamp + h·d`, control messages at their
/// emission clock plus `d`, and an optimization pass lasts `filter_steps · step_cost`
/// seconds. Results then depend only on the data, never on thread scheduling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Timing {
    Wall,
    Logical { step_cost: f64 },
}

impl Timing {
    pub fn is_logical(&self) -> bool {
        matches!(self, Timing::Logical { .. })
    }
}

/// Wall-clock reference shared by all workers of one run. Readings are offset so
/// that the run starts at the first sample's timestamp, matching logical times.
#[derive(Clone, Copy, Debug)]
pub struct Epoch {
    pub start: Instant,
    pub offset: f64,
}

impl Epoch {
    pub fn new(offset: f64) -> Self {
        Self { start: Instant::now(), offset }
    }

    pub fn now(&self) -> f64 {
        self.offset + self.start.elapsed().as_secs_f64()
    }
}
