//! Experiment harness around `rebalance-core`: configuration, parameter
//! sweeps, and machine-readable metric output. The binary front-end lives in
//! `main.rs`; everything here is callable as a library so the whole harness
//! is testable in-process.

pub mod cdf;
pub mod config;
pub mod golden;
pub mod matrix;
pub mod output;

use rebalance_core::sim::Clock;
use std::time::Instant;

/// Host wall clock for plan-time measurement.
pub struct StdClock {
    origin: Instant,
}

impl StdClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for StdClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for StdClock {
    fn now_micros(&mut self) -> u64 {
        self.origin.elapsed().as_micros() as u64
    }
}
