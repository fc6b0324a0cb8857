//! Cumulative distribution of per-instance load under pure hash routing.

use std::path::{Path, PathBuf};

use rebalance_core::model::{loads, AssignmentFunction};
use rebalance_core::rng::mix64;
use rebalance_core::workload::{fluctuate, zipf_interval};

use crate::config::ExperimentSpec;
use crate::matrix::MatrixError;
use crate::output;

#[derive(Clone, Debug, PartialEq)]
pub struct CdfRow {
    pub percentile: f64,
    pub avg_load: f64,
    /// Average load relative to the mean of the per-instance averages.
    pub load_ratio: f64,
}

/// Per-instance average load over the configured intervals under hash-only
/// routing, sorted ascending with percentile ranks.
pub fn compute_cdf(spec: &ExperimentSpec) -> Result<Vec<CdfRow>, MatrixError> {
    let n = spec.topology.n_downstream;
    let f = AssignmentFunction::hash_only(n);
    let mut snap = zipf_interval(&spec.generator, 0);
    let mut sums = vec![0u64; n];
    for interval in 0..spec.intervals {
        if interval > 0 {
            snap = fluctuate(
                &snap,
                spec.generator.fluctuation,
                &f,
                mix64(spec.generator.seed ^ mix64(interval)),
                spec.topology.window,
            )
            .map_err(|source| MatrixError::Sim {
                context: format!("cdf interval {interval}"),
                source: rebalance_core::sim::SimError::Workload(source),
            })?;
        }
        for (d, l) in loads(&f, &snap).into_iter().enumerate() {
            sums[d] += l;
        }
    }
    let mut avgs: Vec<f64> = sums
        .iter()
        .map(|&s| s as f64 / spec.intervals as f64)
        .collect();
    avgs.sort_by(|a, b| a.total_cmp(b));
    let mean: f64 = avgs.iter().sum::<f64>() / n as f64;
    Ok(avgs
        .into_iter()
        .enumerate()
        .map(|(i, avg_load)| CdfRow {
            percentile: 100.0 * (i + 1) as f64 / n as f64,
            avg_load,
            load_ratio: if mean == 0.0 { 0.0 } else { avg_load / mean },
        })
        .collect())
}

/// Writes `cdf.csv` into `out_dir` and returns its path.
pub fn skewness_cdf(spec: &ExperimentSpec, out_dir: &Path) -> Result<PathBuf, MatrixError> {
    let rows = compute_cdf(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|source| MatrixError::Io {
        path: out_dir.display().to_string(),
        source,
    })?;
    let mut csv = String::from("percentile,avg_load,load_ratio\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            row.percentile, row.avg_load, row.load_ratio
        ));
    }
    let path = out_dir.join("cdf.csv");
    output::write_atomic(&path, csv.as_bytes()).map_err(|source| MatrixError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}
