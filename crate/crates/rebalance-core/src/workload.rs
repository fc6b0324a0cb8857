//! Synthetic workload generation: Zipf-skewed key frequencies with
//! controlled interval-to-interval fluctuation.

use alloc::vec::Vec;
use core::fmt;

use crate::model::{AssignmentFunction, KeyId, KeyIntervalStats, WorkloadSnapshot};
use crate::rng::Rng;

/// Parameters of the synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub key_count: u64,
    /// Zipf exponent; zero is uniform.
    pub skew: f64,
    /// Fluctuation rate: the per-instance load displacement, relative to the
    /// mean load, that each new interval must reach.
    pub fluctuation: f64,
    pub tuples_per_interval: u64,
    pub cost_per_tuple: u64,
    pub mem_per_tuple: u64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.key_count < 1 {
            return Err(WorkloadError::InvalidConfig("key_count must be at least 1"));
        }
        if self.skew < 0.0 {
            return Err(WorkloadError::InvalidConfig("skew must be non-negative"));
        }
        if self.fluctuation < 0.0 {
            return Err(WorkloadError::InvalidConfig(
                "fluctuation must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkloadError {
    InvalidConfig(&'static str),
    /// The fluctuation target could not be reached within the swap budget.
    Unreachable,
}

impl fmt::Display for WorkloadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WorkloadError::InvalidConfig(what) => write!(f, "invalid generator config: {what}"),
            WorkloadError::Unreachable => {
                write!(f, "fluctuation target unreachable within the swap budget")
            }
        }
    }
}

impl core::error::Error for WorkloadError {}

/// Zipf frequencies for ranks `1..=key_count`, scaled to sum exactly to
/// `total` using largest-remainder rounding.
fn zipf_frequencies(key_count: u64, skew: f64, total: u64) -> Vec<u64> {
    let k = key_count as usize;
    let mut weights = Vec::with_capacity(k);
    let mut weight_sum = 0.0f64;
    for rank in 1..=key_count {
        let w = libm::pow(rank as f64, -skew);
        weights.push(w);
        weight_sum += w;
    }
    let mut freqs = Vec::with_capacity(k);
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(k);
    let mut assigned = 0u64;
    for (i, w) in weights.iter().enumerate() {
        let quota = total as f64 * w / weight_sum;
        let base = libm::floor(quota) as u64;
        freqs.push(base);
        assigned += base;
        remainders.push((i, quota - base as f64));
    }
    // Hand out the leftover units to the largest remainders, earlier ranks
    // breaking ties, so the total is exact and frequencies stay
    // non-increasing in rank.
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let leftover = (total - assigned) as usize;
    for &(i, _) in remainders.iter().take(leftover) {
        freqs[i] += 1;
    }
    freqs
}

/// Builds the snapshot for one interval: rank-`j` key frequency proportional
/// to `j^-skew`, cost and memory derived per tuple. The result is a pure
/// function of the config and interval index.
pub fn zipf_interval(cfg: &GeneratorConfig, interval: u64) -> WorkloadSnapshot {
    debug_assert!(cfg.validate().is_ok());
    let freqs = zipf_frequencies(cfg.key_count, cfg.skew, cfg.tuples_per_interval);
    let mut snap = WorkloadSnapshot::new(interval);
    for (rank0, &g) in freqs.iter().enumerate() {
        let key = KeyId(rank0 as u64);
        snap.insert(KeyIntervalStats::new(
            key,
            g,
            g * cfg.cost_per_tuple,
            g * cfg.mem_per_tuple,
        ));
    }
    snap
}

/// Derives the next interval from `prev` by swapping the frequencies (and
/// the derived cost and newest memory value) of random key pairs whose
/// destinations under `assignment` differ, until some instance's load has
/// moved by at least `f` relative to the mean load. Only swaps that push a
/// target instance's load upward are kept, so the process makes monotone
/// progress toward the displacement target instead of diffusing around the
/// balanced state; the target rotates between calls. Total cost is
/// invariant and no keys are added or removed. Memory histories roll
/// forward, keeping at most `window` values.
pub fn fluctuate(
    prev: &WorkloadSnapshot,
    f: f64,
    assignment: &AssignmentFunction,
    seed: u64,
    window: usize,
) -> Result<WorkloadSnapshot, WorkloadError> {
    debug_assert!(!prev.is_empty());
    let keys: Vec<KeyId> = prev.keys().collect();
    let key_count = keys.len() as u64;
    let dests: Vec<usize> = keys.iter().map(|&k| assignment.evaluate(k).0).collect();

    // Working triples: frequency, cost, and the newest per-interval memory.
    let mut triples: Vec<(u64, u64, u64)> = keys
        .iter()
        .map(|k| {
            let s = &prev.stats[k];
            (s.frequency, s.cost, s.latest_memory())
        })
        .collect();

    let baseline = crate::model::loads(assignment, prev);
    let mean = crate::model::mean_load(&baseline);
    // Signed displacement of each instance from its previous-interval load.
    let mut disp: Vec<i64> = alloc::vec![0; baseline.len()];
    let max_abs = |disp: &[i64]| disp.iter().map(|d| d.unsigned_abs()).max().unwrap_or(0);

    let target_met = |disp: &[i64]| -> bool {
        if f <= 0.0 {
            return true;
        }
        if mean == 0.0 {
            return false;
        }
        max_abs(disp) as f64 / mean >= f
    };

    if !target_met(&disp) {
        let mut rng = Rng::new(seed);
        let n = baseline.len();
        let budget = 100 * key_count;
        let per_target = (budget / n as u64).max(1);
        let mut done = false;
        // Drive one instance at a time: any swap that grows the target's
        // displacement is kept. The starting instance rotates with the seed
        // so churn spreads across the whole operator, and falling through to
        // the next target avoids stalling when one runs out of headroom.
        let start = rng.next_below(n as u64) as usize;
        'targets: for offset in 0..n {
            let target = (start + offset) % n;
            let mut attempts = 0u64;
            while attempts < per_target {
                attempts += 1;
                let x = rng.next_below(key_count) as usize;
                let y = rng.next_below(key_count) as usize;
                if dests[x] == dests[y] {
                    continue;
                }
                // Orient the pair so `a` sits on the target instance.
                let (a, b) = if dests[x] == target {
                    (x, y)
                } else if dests[y] == target {
                    (y, x)
                } else {
                    continue;
                };
                let (da, db) = (dests[a], dests[b]);
                // Pump the target upward: trading a smaller value for a
                // bigger one raises its load monotonically. The downward
                // direction saturates before one mean load and is never
                // needed for the displacement predicate.
                let gain = triples[b].1 as i64 - triples[a].1 as i64;
                if gain <= 0 {
                    continue;
                }
                triples.swap(a, b);
                disp[da] += gain;
                disp[db] -= gain;
                if target_met(&disp) {
                    done = true;
                    break 'targets;
                }
            }
        }
        if !done {
            return Err(WorkloadError::Unreachable);
        }
    }

    let mut next = WorkloadSnapshot::new(prev.interval + 1);
    for (i, &key) in keys.iter().enumerate() {
        let (g, c, s_new) = triples[i];
        let mut stats = prev.stats[&key].clone();
        stats.frequency = g;
        stats.cost = c;
        stats.push_memory(s_new, window);
        next.insert(stats);
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{loads, InstanceId};

    fn cfg(key_count: u64, skew: f64, total: u64) -> GeneratorConfig {
        GeneratorConfig {
            key_count,
            skew,
            fluctuation: 0.0,
            tuples_per_interval: total,
            cost_per_tuple: 1,
            mem_per_tuple: 1,
            seed: 1,
        }
    }

    #[test]
    fn uniform_skew_splits_evenly() {
        let snap = zipf_interval(&cfg(4, 0.0, 400), 0);
        for s in snap.stats.values() {
            assert_eq!(s.frequency, 100);
        }
    }

    #[test]
    fn unit_skew_matches_harmonic_shares() {
        // Weights (1, 1/2, 1/3, 1/4) sum to 25/12; scaling 250 tuples gives
        // exactly (120, 60, 40, 30).
        let snap = zipf_interval(&cfg(4, 1.0, 250), 0);
        let freqs: Vec<u64> = (0..4).map(|i| snap.stats[&KeyId(i)].frequency).collect();
        assert_eq!(freqs, alloc::vec![120, 60, 40, 30]);
        assert_eq!(freqs.iter().sum::<u64>(), 250);
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg(100, 0.85, 10_000);
        assert_eq!(zipf_interval(&c, 3), zipf_interval(&c, 3));
    }

    #[test]
    fn frequencies_sum_exactly_and_decrease() {
        for &(k, z, t) in &[(7u64, 0.5f64, 1003u64), (50, 0.85, 9999), (13, 2.0, 100)] {
            let snap = zipf_interval(&cfg(k, z, t), 0);
            let freqs: Vec<u64> = (0..k).map(|i| snap.stats[&KeyId(i)].frequency).collect();
            assert_eq!(freqs.iter().sum::<u64>(), t, "k={k} z={z} t={t}");
            assert!(
                freqs.windows(2).all(|w| w[0] >= w[1]),
                "k={k} z={z} t={t}: {freqs:?}"
            );
        }
    }

    #[test]
    fn zero_fluctuation_changes_nothing() {
        let c = cfg(20, 0.85, 1000);
        let snap = zipf_interval(&c, 0);
        let f = AssignmentFunction::hash_only(4);
        let next = fluctuate(&snap, 0.0, &f, 7, 5).unwrap();
        assert_eq!(next.interval, 1);
        for (k, s) in &snap.stats {
            assert_eq!(next.stats[k].frequency, s.frequency);
            assert_eq!(next.stats[k].cost, s.cost);
        }
    }

    #[test]
    fn single_instance_target_is_unreachable() {
        let c = cfg(20, 0.85, 1000);
        let snap = zipf_interval(&c, 0);
        let f = AssignmentFunction::hash_only(1);
        assert_eq!(
            fluctuate(&snap, 0.5, &f, 7, 5),
            Err(WorkloadError::Unreachable)
        );
    }

    #[test]
    fn fluctuation_reaches_the_displacement_target() {
        // Verified by recomputing per-instance loads before and after.
        let c = cfg(100, 0.85, 10_000);
        let snap = zipf_interval(&c, 0);
        let f = AssignmentFunction::hash_only(4);
        let target = 0.5;
        let next = fluctuate(&snap, target, &f, 99, 5).unwrap();
        let before = loads(&f, &snap);
        let after = loads(&f, &next);
        let mean = crate::model::mean_load(&before);
        let max_disp = before
            .iter()
            .zip(&after)
            .map(|(&b, &a)| libm::fabs(a as f64 - b as f64) / mean)
            .fold(0.0, f64::max);
        assert!(max_disp >= target, "displacement {max_disp} < {target}");
    }

    #[test]
    fn fluctuation_conserves_total_cost_and_keys() {
        let c = cfg(64, 1.0, 5000);
        let snap = zipf_interval(&c, 0);
        let f = AssignmentFunction::hash_only(5);
        let next = fluctuate(&snap, 0.8, &f, 3, 5).unwrap();
        assert_eq!(next.total_cost(), snap.total_cost());
        assert_eq!(
            next.keys().collect::<Vec<_>>(),
            snap.keys().collect::<Vec<_>>()
        );
    }

    #[test]
    fn memory_histories_roll_forward() {
        let c = cfg(10, 0.5, 100);
        let snap = zipf_interval(&c, 0);
        let f = AssignmentFunction::hash_only(2);
        let window = 3;
        let mut cur = snap;
        for i in 1..=5u64 {
            cur = fluctuate(&cur, 0.1, &f, i, window).unwrap();
            assert_eq!(cur.interval, i);
            for s in cur.stats.values() {
                assert!(s.memory_values().len() <= window);
                let expect_len = ((i + 1) as usize).min(window);
                assert_eq!(s.memory_values().len(), expect_len);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn zipf_totals_are_exact_and_monotone(
            k in 1u64..200,
            z in 0.0f64..2.0,
            t in 0u64..100_000,
        ) {
            let snap = zipf_interval(&cfg(k, z, t), 0);
            let freqs: Vec<u64> = (0..k).map(|i| snap.stats[&KeyId(i)].frequency).collect();
            proptest::prop_assert_eq!(freqs.iter().sum::<u64>(), t);
            proptest::prop_assert!(freqs.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn swapped_destinations_differ() {
        // Any key whose frequency changed must have traded with a key on a
        // different instance, so per-instance key counts are unchanged.
        let c = cfg(40, 0.9, 4000);
        let snap = zipf_interval(&c, 0);
        let f = AssignmentFunction::hash_only(3);
        let next = fluctuate(&snap, 0.4, &f, 11, 5).unwrap();
        for d in 0..3 {
            let count_before = snap
                .keys()
                .filter(|&k| f.evaluate(k) == InstanceId(d))
                .count();
            let count_after = next
                .keys()
                .filter(|&k| f.evaluate(k) == InstanceId(d))
                .count();
            assert_eq!(count_before, count_after);
        }
    }
}
