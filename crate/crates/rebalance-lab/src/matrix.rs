//! Experiment matrix execution: every (sweep point, algorithm, repeat)
//! combination runs as an independent simulation; each (point, algorithm)
//! pair gets one timeline CSV, and each sweep gets one summary JSON with
//! per-point aggregates over the repeats.

use std::fmt;
use std::path::{Path, PathBuf};

use rebalance_core::sim::{self, Algorithm, Clock, NullClock, SimError};

use crate::config::{self, defaults, ExperimentSpec, Sweep};
use crate::output::{
    self, Aggregate, AlgorithmSummary, Deviation, PointSummary, SweepSummary,
};
use crate::StdClock;

#[derive(Debug)]
pub enum MatrixError {
    Io { path: String, source: std::io::Error },
    Config(config::ConfigError),
    Sim { context: String, source: SimError },
}

impl fmt::Display for MatrixError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MatrixError::Io { path, source } => write!(f, "writing {path}: {source}"),
            MatrixError::Config(e) => write!(f, "{e}"),
            MatrixError::Sim { context, source } => write!(f, "simulating {context}: {source}"),
        }
    }
}

impl std::error::Error for MatrixError {}

impl From<config::ConfigError> for MatrixError {
    fn from(e: config::ConfigError) -> Self {
        MatrixError::Config(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MatrixError + '_ {
    move |source| MatrixError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Formats a sweep value for file names; integral values drop the fraction.
fn value_label(value: f64) -> String {
    if value.fract() == 0.0 && value.abs() < 1e15 {
        format!("{}", value as i64)
    } else {
        format!("{value}")
    }
}

struct RunAggregates {
    max_load_ratio: f64,
    migration_cost_pct: f64,
    table_size: f64,
    plan_micros: f64,
    episodes: f64,
}

fn summarize_run(report: &sim::SimReport) -> RunAggregates {
    let n = report.metrics.len().max(1) as f64;
    let mean = |f: fn(&sim::TimelineMetrics) -> f64| -> f64 {
        report.metrics.iter().map(f).sum::<f64>() / n
    };
    let episode_count = report.episodes.len();
    let plan_micros = if episode_count == 0 {
        0.0
    } else {
        report
            .episodes
            .iter()
            .map(|e| e.plan_micros as f64)
            .sum::<f64>()
            / episode_count as f64
    };
    RunAggregates {
        max_load_ratio: mean(|m| m.max_load_ratio),
        migration_cost_pct: mean(|m| m.migration_cost_pct),
        table_size: mean(|m| m.table_size as f64),
        plan_micros,
        episodes: episode_count as f64,
    }
}

/// Runs the full matrix into `out_dir`; returns the files written, sorted.
pub fn run_matrix(spec: &ExperimentSpec, out_dir: &Path) -> Result<Vec<PathBuf>, MatrixError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();

    // No sweeps means a single default point.
    let sweeps: Vec<(String, Vec<Option<f64>>)> = if spec.sweeps.is_empty() {
        vec![("default".to_string(), vec![None])]
    } else {
        spec.sweeps
            .iter()
            .map(|Sweep { parameter, values }| {
                (parameter.clone(), values.iter().copied().map(Some).collect())
            })
            .collect()
    };

    for (sweep_name, values) in sweeps {
        let mut points = Vec::new();
        for value in values {
            let point_spec = match value {
                Some(v) => config::apply_sweep_value(spec, &sweep_name, v)?,
                None => spec.clone(),
            };
            let mut algo_summaries = Vec::new();
            for &algorithm in &point_spec.algorithms {
                let label = match value {
                    Some(v) => format!("{sweep_name}-{}-{}", value_label(v), algorithm.name()),
                    None => format!("default-{}", algorithm.name()),
                };
                let mut samples: Vec<RunAggregates> = Vec::new();
                for repeat in 0..point_spec.repeats {
                    let mut topo = point_spec.topology.clone();
                    let mut gen = point_spec.generator.clone();
                    topo.seed = topo.seed.wrapping_add(repeat);
                    gen.seed = gen.seed.wrapping_add(repeat);
                    let report = if point_spec.measure_time {
                        let mut clock = StdClock::new();
                        run_one(&topo, &gen, &point_spec, algorithm, &mut clock, &label)?
                    } else {
                        run_one(&topo, &gen, &point_spec, algorithm, &mut NullClock, &label)?
                    };
                    if repeat == 0 {
                        let csv_path = out_dir.join(format!("{label}.csv"));
                        output::write_atomic(&csv_path, output::timeline_csv(&report.metrics).as_bytes())
                            .map_err(io_err(&csv_path))?;
                        written.push(csv_path);
                        if point_spec.write_events {
                            let ev_path = out_dir.join(format!("{label}.events.ndjson"));
                            output::write_atomic(&ev_path, output::events_ndjson(&report.events).as_bytes())
                                .map_err(io_err(&ev_path))?;
                            written.push(ev_path);
                        }
                    }
                    samples.push(summarize_run(&report));
                }
                algo_summaries.push(AlgorithmSummary {
                    algorithm: algorithm.name().to_string(),
                    max_load_ratio: Aggregate::over(
                        &samples.iter().map(|s| s.max_load_ratio).collect::<Vec<_>>(),
                    ),
                    migration_cost_pct: Aggregate::over(
                        &samples.iter().map(|s| s.migration_cost_pct).collect::<Vec<_>>(),
                    ),
                    table_size: Aggregate::over(
                        &samples.iter().map(|s| s.table_size).collect::<Vec<_>>(),
                    ),
                    plan_micros: Aggregate::over(
                        &samples.iter().map(|s| s.plan_micros).collect::<Vec<_>>(),
                    ),
                    episodes: Aggregate::over(
                        &samples.iter().map(|s| s.episodes).collect::<Vec<_>>(),
                    ),
                });
            }
            points.push(PointSummary {
                value: value.unwrap_or(0.0),
                algorithms: algo_summaries,
            });
        }
        let summary = SweepSummary {
            schema_version: 1,
            sweep: sweep_name.clone(),
            repeats: spec.repeats,
            intervals: spec.intervals,
            deviations: deviations_for(spec),
            points,
        };
        let path = out_dir.join(format!("{sweep_name}-summary.json"));
        output::write_atomic(&path, output::summary_json(&summary).as_bytes())
            .map_err(io_err(&path))?;
        written.push(path);
    }
    written.sort();
    Ok(written)
}

fn run_one(
    topo: &rebalance_core::TopologyConfig,
    gen: &rebalance_core::workload::GeneratorConfig,
    spec: &ExperimentSpec,
    algorithm: Algorithm,
    clock: &mut dyn Clock,
    label: &str,
) -> Result<sim::SimReport, MatrixError> {
    sim::run(topo, gen, spec.intervals, algorithm, spec.planning, clock).map_err(|source| {
        MatrixError::Sim {
            context: label.to_string(),
            source,
        }
    })
}

/// Departures from the reference experiment scale, recorded in every
/// summary.
fn deviations_for(spec: &ExperimentSpec) -> Vec<Deviation> {
    let mut out = Vec::new();
    if spec.generator.key_count < defaults::KEYS_REFERENCE {
        out.push(Deviation {
            parameter: "keys".to_string(),
            value: spec.generator.key_count,
            reference: defaults::KEYS_REFERENCE,
            reason: "desk-scale key domain".to_string(),
        });
    }
    out
}
