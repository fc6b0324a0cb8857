//! File output: timeline CSVs, newline-delimited JSON event logs, and sweep
//! summary JSON. All writes go through a temp file and an atomic rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use rebalance_core::sim::{ProtocolEvent, TimelineMetrics};
use serde::Serialize;

pub const CSV_HEADER: &str =
    "interval,max_load_ratio,migration_cost_pct,table_size,plan_micros,rebalanced";

/// Writes content atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, content: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(content)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Renders one run's timeline as CSV. Floats use the shortest
/// round-trippable decimal form with a `.` separator, so identical runs
/// produce byte-identical files.
pub fn timeline_csv(metrics: &[TimelineMetrics]) -> String {
    let mut out = String::with_capacity(64 * (metrics.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.interval,
            m.max_load_ratio,
            m.migration_cost_pct,
            m.table_size,
            m.plan_micros,
            m.rebalanced
        ));
    }
    out
}

#[derive(Serialize)]
struct EventRow<'a> {
    episode: u64,
    step: &'a str,
    interval: u64,
    detail: &'a str,
}

/// Renders the protocol event log as newline-delimited JSON records.
pub fn events_ndjson(events: &[ProtocolEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let row = EventRow {
            episode: e.episode,
            step: e.step.name(),
            interval: e.interval,
            detail: &e.detail,
        };
        out.push_str(&serde_json::to_string(&row).expect("event row serializes"));
        out.push('\n');
    }
    out
}

/// Mean, minimum, and maximum of one metric over the repeats of a sweep
/// point.
#[derive(Serialize, Clone, Copy, Debug, Default)]
pub struct Aggregate {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn over(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let sum: f64 = samples.iter().sum();
        Self {
            mean: sum / samples.len() as f64,
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Per-algorithm aggregates at one sweep point.
#[derive(Serialize, Clone, Debug)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub max_load_ratio: Aggregate,
    pub migration_cost_pct: Aggregate,
    pub table_size: Aggregate,
    pub plan_micros: Aggregate,
    pub episodes: Aggregate,
}

#[derive(Serialize, Clone, Debug)]
pub struct PointSummary {
    pub value: f64,
    pub algorithms: Vec<AlgorithmSummary>,
}

/// A recorded departure from the reference experiment scale.
#[derive(Serialize, Clone, Debug)]
pub struct Deviation {
    pub parameter: String,
    pub value: u64,
    pub reference: u64,
    pub reason: String,
}

#[derive(Serialize, Clone, Debug)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub sweep: String,
    pub repeats: u64,
    pub intervals: u64,
    pub deviations: Vec<Deviation>,
    pub points: Vec<PointSummary>,
}

pub fn summary_json(summary: &SweepSummary) -> String {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_floats_are_plain_decimals() {
        let metrics = vec![TimelineMetrics {
            interval: 3,
            max_load_ratio: 1.25,
            migration_cost_pct: 0.5,
            table_size: 7,
            plan_micros: 0,
            rebalanced: true,
        }];
        let csv = timeline_csv(&metrics);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("3,1.25,0.5,7,0,true"));
    }

    #[test]
    fn aggregate_over_samples() {
        let agg = Aggregate::over(&[1.0, 2.0, 6.0]);
        assert_eq!(agg.mean, 3.0);
        assert_eq!(agg.min, 1.0);
        assert_eq!(agg.max, 6.0);
    }

    #[test]
    fn ndjson_rows_are_single_lines() {
        use rebalance_core::sim::ProtocolStep;
        let events = vec![ProtocolEvent {
            episode: 0,
            step: ProtocolStep::Plan,
            interval: 2,
            detail: "delta 3 keys".into(),
        }];
        let text = events_ndjson(&events);
        assert_eq!(
            text,
            "{\"episode\":0,\"step\":\"plan\",\"interval\":2,\"detail\":\"delta 3 keys\"}\n"
        );
    }
}
