//! Experiment configuration: JSON file, flag overrides, defaults,
//! validation.
//!
//! Precedence per field: command-line flag, then config file, then (for the
//! seed) the `REBALANCE_LAB_SEED` environment variable, then the built-in
//! desk-scale defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rebalance_core::sim::{Algorithm, PlanningMode};
use rebalance_core::workload::GeneratorConfig;
use rebalance_core::TopologyConfig;
use serde::Deserialize;

/// Desk-scale defaults. The key domain is scaled down from production size
/// so sweeps finish on a workstation; the summary output records the
/// deviation.
pub mod defaults {
    pub const KEYS: u64 = 10_000;
    /// Production-scale key domain the desk default stands in for.
    pub const KEYS_REFERENCE: u64 = 1_000_000;
    pub const SKEW: f64 = 0.85;
    pub const FLUCTUATION: f64 = 1.0;
    pub const THETA_MAX: f64 = 0.08;
    pub const BETA: f64 = 1.5;
    pub const LEVEL_R: u32 = 3;
    pub const WINDOW: usize = 5;
    pub const INSTANCES: usize = 15;
    pub const UPSTREAM_INSTANCES: usize = 10;
    pub const TABLE_CAPACITY: usize = 3000;
    pub const TUPLES_PER_INTERVAL: u64 = 4_000_000;
    pub const COST_PER_TUPLE: u64 = 1;
    pub const MEM_PER_TUPLE: u64 = 1;
    pub const INTERVALS: u64 = 50;
    pub const REPEATS: u64 = 1;
    pub const SEED: u64 = 42;
}

/// Environment variable consulted when neither flag nor file set a seed.
pub const SEED_ENV_VAR: &str = "REBALANCE_LAB_SEED";

#[derive(Debug)]
pub enum ConfigError {
    /// A field failed validation; carries the field path and the reason.
    Invalid { field: String, reason: String },
    Io { path: String, source: std::io::Error },
    Parse { path: String, source: serde_json::Error },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Invalid { field, reason } => {
                write!(f, "invalid config field `{field}`: {reason}")
            }
            ConfigError::Io { path, source } => write!(f, "cannot read {path}: {source}"),
            ConfigError::Parse { path, source } => write!(f, "cannot parse {path}: {source}"),
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Raw JSON config; every field optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub keys: Option<u64>,
    pub skew: Option<f64>,
    pub fluctuation: Option<f64>,
    pub theta_max: Option<f64>,
    pub beta: Option<f64>,
    pub level_r: Option<u32>,
    pub window: Option<usize>,
    pub instances: Option<usize>,
    pub upstream_instances: Option<usize>,
    pub table_capacity: Option<usize>,
    pub tuples_per_interval: Option<u64>,
    pub cost_per_tuple: Option<u64>,
    pub mem_per_tuple: Option<u64>,
    pub seed: Option<u64>,
    pub intervals: Option<u64>,
    pub repeats: Option<u64>,
    pub algorithms: Option<Vec<String>>,
    pub planning: Option<String>,
    /// Measure plan wall time with a real clock. Off by default so output
    /// files are byte-identical for identical specs and seeds.
    pub measure_time: Option<bool>,
    /// Also write one newline-delimited JSON event log per run.
    pub events: Option<bool>,
    pub sweeps: Option<BTreeMap<String, Vec<serde_json::Value>>>,
}

/// Flag-level overrides for the base parameters.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub keys: Option<u64>,
    pub skew: Option<f64>,
    pub fluctuation: Option<f64>,
    pub theta_max: Option<f64>,
    pub beta: Option<f64>,
    pub level_r: Option<u32>,
    pub window: Option<usize>,
    pub instances: Option<usize>,
    pub table_capacity: Option<usize>,
    pub seed: Option<u64>,
}

/// One sweep: a parameter name and the values to visit.
#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// Fully resolved experiment specification.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub topology: TopologyConfig,
    pub generator: GeneratorConfig,
    pub intervals: u64,
    pub repeats: u64,
    pub algorithms: Vec<Algorithm>,
    pub planning: PlanningMode,
    pub measure_time: bool,
    pub write_events: bool,
    pub sweeps: Vec<Sweep>,
}

/// Parameters a sweep may vary; also the long CLI flag names with `-`
/// replaced by `_`.
pub const SWEEPABLE: &[&str] = &[
    "keys",
    "skew",
    "fluctuation",
    "theta_max",
    "beta",
    "level_r",
    "window",
    "instances",
    "table_capacity",
];

pub fn algorithm_from_name(name: &str) -> Option<Algorithm> {
    match name {
        "MinTable" => Some(Algorithm::MinTable),
        "MinMig" => Some(Algorithm::MinMig),
        "Mixed" => Some(Algorithm::Mixed),
        "MixedBF" => Some(Algorithm::MixedBf),
        "HashOnly" => Some(Algorithm::HashOnly),
        _ => None,
    }
}

/// Loads the config file (when given), applies flag overrides and the seed
/// fallback, fills defaults, and validates.
pub fn parse_config(
    file: Option<&Path>,
    overrides: &Overrides,
    env_seed: Option<u64>,
) -> Result<ExperimentSpec, ConfigError> {
    let raw: RawConfig = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.display().to_string(),
                source,
            })?
        }
        None => RawConfig::default(),
    };
    resolve(raw, overrides, env_seed)
}

pub fn resolve(
    raw: RawConfig,
    overrides: &Overrides,
    env_seed: Option<u64>,
) -> Result<ExperimentSpec, ConfigError> {
    let seed = overrides
        .seed
        .or(raw.seed)
        .or(env_seed)
        .unwrap_or(defaults::SEED);

    let topology = TopologyConfig {
        n_upstream: raw.upstream_instances.unwrap_or(defaults::UPSTREAM_INSTANCES),
        n_downstream: overrides
            .instances
            .or(raw.instances)
            .unwrap_or(defaults::INSTANCES),
        window: overrides.window.or(raw.window).unwrap_or(defaults::WINDOW),
        theta_max: overrides
            .theta_max
            .or(raw.theta_max)
            .unwrap_or(defaults::THETA_MAX),
        table_capacity: overrides
            .table_capacity
            .or(raw.table_capacity)
            .unwrap_or(defaults::TABLE_CAPACITY),
        beta: overrides.beta.or(raw.beta).unwrap_or(defaults::BETA),
        level_exponent: overrides.level_r.or(raw.level_r).unwrap_or(defaults::LEVEL_R),
        seed,
    };
    let generator = GeneratorConfig {
        key_count: overrides.keys.or(raw.keys).unwrap_or(defaults::KEYS),
        skew: overrides.skew.or(raw.skew).unwrap_or(defaults::SKEW),
        fluctuation: overrides
            .fluctuation
            .or(raw.fluctuation)
            .unwrap_or(defaults::FLUCTUATION),
        tuples_per_interval: raw
            .tuples_per_interval
            .unwrap_or(defaults::TUPLES_PER_INTERVAL),
        cost_per_tuple: raw.cost_per_tuple.unwrap_or(defaults::COST_PER_TUPLE),
        mem_per_tuple: raw.mem_per_tuple.unwrap_or(defaults::MEM_PER_TUPLE),
        seed,
    };

    let algorithms = match &raw.algorithms {
        None => vec![Algorithm::Mixed],
        Some(names) => {
            if names.is_empty() {
                return Err(invalid("algorithms", "must not be empty"));
            }
            let mut out = Vec::with_capacity(names.len());
            for name in names {
                out.push(algorithm_from_name(name).ok_or_else(|| {
                    invalid(
                        "algorithms",
                        format!(
                            "unknown algorithm `{name}`; expected MinTable, MinMig, Mixed, MixedBF, or HashOnly"
                        ),
                    )
                })?);
            }
            out
        }
    };

    let planning = match raw.planning.as_deref() {
        None | Some("compact") => PlanningMode::Compact,
        Some("full") => PlanningMode::FullKey,
        Some(other) => {
            return Err(invalid(
                "planning",
                format!("unknown mode `{other}`; expected `compact` or `full`"),
            ))
        }
    };

    let mut sweeps = Vec::new();
    if let Some(raw_sweeps) = raw.sweeps {
        for (parameter, values) in raw_sweeps {
            if !SWEEPABLE.contains(&parameter.as_str()) {
                return Err(invalid(
                    &format!("sweeps.{parameter}"),
                    format!("not a sweepable parameter; expected one of {SWEEPABLE:?}"),
                ));
            }
            if values.is_empty() {
                return Err(invalid(&format!("sweeps.{parameter}"), "must not be empty"));
            }
            let mut nums = Vec::with_capacity(values.len());
            for v in &values {
                let n = v.as_f64().ok_or_else(|| {
                    invalid(&format!("sweeps.{parameter}"), "values must be numbers")
                })?;
                nums.push(n);
            }
            sweeps.push(Sweep {
                parameter,
                values: nums,
            });
        }
    }

    let spec = ExperimentSpec {
        topology,
        generator,
        intervals: raw.intervals.unwrap_or(defaults::INTERVALS),
        repeats: raw.repeats.unwrap_or(defaults::REPEATS),
        algorithms,
        planning,
        measure_time: raw.measure_time.unwrap_or(false),
        write_events: raw.events.unwrap_or(false),
        sweeps,
    };
    validate(&spec)?;
    Ok(spec)
}

fn validate(spec: &ExperimentSpec) -> Result<(), ConfigError> {
    let t = &spec.topology;
    let g = &spec.generator;
    if t.n_downstream < 1 {
        return Err(invalid("instances", "must be at least 1"));
    }
    if t.n_upstream < 1 {
        return Err(invalid("upstream_instances", "must be at least 1"));
    }
    if t.window < 1 {
        return Err(invalid("window", "must be at least 1"));
    }
    if t.theta_max.is_nan() || t.theta_max < 0.0 {
        return Err(invalid("theta_max", "must be non-negative"));
    }
    if t.beta.is_nan() || t.beta < 0.0 {
        return Err(invalid("beta", "must be non-negative"));
    }
    if t.level_exponent > 16 {
        return Err(invalid("level_r", "must be at most 16"));
    }
    if g.key_count < 1 {
        return Err(invalid("keys", "must be at least 1"));
    }
    if g.skew.is_nan() || g.skew < 0.0 {
        return Err(invalid("skew", "must be non-negative"));
    }
    if g.fluctuation.is_nan() || g.fluctuation < 0.0 {
        return Err(invalid("fluctuation", "must be non-negative"));
    }
    if spec.intervals < 1 {
        return Err(invalid("intervals", "must be at least 1"));
    }
    if spec.repeats < 1 {
        return Err(invalid("repeats", "must be at least 1"));
    }
    Ok(())
}

/// Applies one sweep value to a copy of the base spec.
pub fn apply_sweep_value(
    spec: &ExperimentSpec,
    parameter: &str,
    value: f64,
) -> Result<ExperimentSpec, ConfigError> {
    let mut out = spec.clone();
    let as_u64 = |field: &str| -> Result<u64, ConfigError> {
        if value < 0.0 || value.fract() != 0.0 {
            Err(invalid(field, format!("{value} is not a non-negative integer")))
        } else {
            Ok(value as u64)
        }
    };
    match parameter {
        "keys" => out.generator.key_count = as_u64("sweeps.keys")?,
        "skew" => out.generator.skew = value,
        "fluctuation" => out.generator.fluctuation = value,
        "theta_max" => out.topology.theta_max = value,
        "beta" => out.topology.beta = value,
        "level_r" => out.topology.level_exponent = as_u64("sweeps.level_r")? as u32,
        "window" => out.topology.window = as_u64("sweeps.window")? as usize,
        "instances" => out.topology.n_downstream = as_u64("sweeps.instances")? as usize,
        "table_capacity" => out.topology.table_capacity = as_u64("sweeps.table_capacity")? as usize,
        other => return Err(invalid("sweeps", format!("unknown parameter `{other}`"))),
    }
    validate(&out)?;
    Ok(out)
}
