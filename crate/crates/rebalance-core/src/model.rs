//! Domain model: keys, instances, workload snapshots, the mixed
//! hash/routing-table assignment function, and the load, balance, and
//! migration metrics everything else is defined in terms of.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use crate::rng::mix64;

/// Opaque tuple key. Ordering is stable across runs and platforms.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct KeyId(pub u64);

/// Downstream task instance, an index in `[0, n_downstream)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct InstanceId(pub usize);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.0)
    }
}

impl fmt::Display for InstanceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

/// Deterministic key hash: 64-bit avalanche mix reduced modulo the
/// downstream instance count. Uniform in expectation over random keys.
pub fn hash_key(key: KeyId, n_downstream: usize) -> InstanceId {
    debug_assert!(n_downstream >= 1);
    InstanceId((mix64(key.0) % n_downstream as u64) as usize)
}

/// Static operator topology and tuning parameters for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TopologyConfig {
    pub n_upstream: usize,
    pub n_downstream: usize,
    /// Number of past intervals of state kept per key.
    pub window: usize,
    /// Tolerated relative load deviation.
    pub theta_max: f64,
    /// Routing table size bound.
    pub table_capacity: usize,
    /// Migration priority exponent weighting compute cost against state size.
    pub beta: f64,
    /// Discretization exponent; the level gap is `2^level_exponent`.
    pub level_exponent: u32,
    pub seed: u64,
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if self.n_upstream < 1
            || self.n_downstream < 1
            || self.window < 1
            || self.theta_max < 0.0
            || self.beta < 0.0
        {
            return Err(CoreError::InvalidConfig);
        }
        Ok(())
    }
}

/// Per-key statistics for one time interval: tuple frequency, compute cost,
/// and the trailing window of per-interval memory values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyIntervalStats {
    pub key: KeyId,
    pub frequency: u64,
    pub cost: u64,
    mem_history: Vec<u64>,
}

impl KeyIntervalStats {
    pub fn new(key: KeyId, frequency: u64, cost: u64, memory: u64) -> Self {
        Self {
            key,
            frequency,
            cost,
            mem_history: alloc::vec![memory],
        }
    }

    /// Appends the newest interval's memory value, keeping at most `window`
    /// entries.
    pub fn push_memory(&mut self, value: u64, window: usize) {
        self.mem_history.push(value);
        let len = self.mem_history.len();
        if len > window {
            self.mem_history.drain(..len - window);
        }
    }

    /// Replaces the newest interval's memory value.
    pub fn set_latest_memory(&mut self, value: u64) {
        if let Some(last) = self.mem_history.last_mut() {
            *last = value;
        }
    }

    pub fn latest_memory(&self) -> u64 {
        self.mem_history.last().copied().unwrap_or(0)
    }

    pub fn memory_values(&self) -> &[u64] {
        &self.mem_history
    }

    /// Windowed memory: the sum of the last `window` per-interval values.
    /// Early intervals with shorter histories contribute what they have.
    pub fn windowed_memory(&self, window: usize) -> u64 {
        let len = self.mem_history.len();
        let start = len.saturating_sub(window);
        self.mem_history[start..].iter().sum()
    }
}

/// All per-key statistics observed during one time interval.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct WorkloadSnapshot {
    pub interval: u64,
    pub stats: BTreeMap<KeyId, KeyIntervalStats>,
}

impl WorkloadSnapshot {
    pub fn new(interval: u64) -> Self {
        Self {
            interval,
            stats: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, stats: KeyIntervalStats) {
        self.stats.insert(stats.key, stats);
    }

    pub fn keys(&self) -> impl Iterator<Item = KeyId> + '_ {
        self.stats.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn cost(&self, key: KeyId) -> Option<u64> {
        self.stats.get(&key).map(|s| s.cost)
    }

    pub fn total_cost(&self) -> u64 {
        self.stats.values().map(|s| s.cost).sum()
    }

    pub fn total_windowed_memory(&self, window: usize) -> u64 {
        self.stats.values().map(|s| s.windowed_memory(window)).sum()
    }
}

/// Explicit key-to-instance overrides on top of the hash function.
///
/// Canonical form: an entry `(k, d)` is stored only when `d != hash(k)`.
/// Assigning a key to its hash destination deletes any existing entry.
///
/// Equality compares routing content only; `capacity` is carried
/// configuration.
#[derive(Clone, Debug, Default)]
pub struct RoutingTable {
    entries: BTreeMap<KeyId, InstanceId>,
    pub capacity: usize,
}

impl PartialEq for RoutingTable {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl Eq for RoutingTable {}

impl RoutingTable {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            capacity,
        }
    }

    /// Routes `key` to `dest`, keeping the table canonical: routing a key to
    /// its hash destination removes its entry instead of storing it.
    pub fn set(&mut self, key: KeyId, dest: InstanceId, n_downstream: usize) {
        if hash_key(key, n_downstream) == dest {
            self.entries.remove(&key);
        } else {
            self.entries.insert(key, dest);
        }
    }

    pub fn remove(&mut self, key: KeyId) -> Option<InstanceId> {
        self.entries.remove(&key)
    }

    pub fn get(&self, key: KeyId) -> Option<InstanceId> {
        self.entries.get(&key).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (KeyId, InstanceId)> + '_ {
        self.entries.iter().map(|(k, d)| (*k, *d))
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// The mixed router: a bounded routing table overlaying a deterministic
/// hash function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssignmentFunction {
    pub table: RoutingTable,
    pub n_downstream: usize,
}

impl AssignmentFunction {
    pub fn new(table: RoutingTable, n_downstream: usize) -> Self {
        debug_assert!(n_downstream >= 1);
        Self {
            table,
            n_downstream,
        }
    }

    /// Pure hash routing (empty table).
    pub fn hash_only(n_downstream: usize) -> Self {
        Self::new(RoutingTable::new(0), n_downstream)
    }

    /// Table entry if present, hash destination otherwise.
    pub fn evaluate(&self, key: KeyId) -> InstanceId {
        self.table
            .get(key)
            .unwrap_or_else(|| hash_key(key, self.n_downstream))
    }

    pub fn hash(&self, key: KeyId) -> InstanceId {
        hash_key(key, self.n_downstream)
    }
}

/// The result of replacing one assignment function with another: the keys
/// that change destination, the new table, and the state volume that must
/// move with them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MigrationPlan {
    pub delta: BTreeSet<KeyId>,
    pub new_table: RoutingTable,
    pub cost: u64,
}

impl MigrationPlan {
    pub fn empty(table: RoutingTable) -> Self {
        Self {
            delta: BTreeSet::new(),
            new_table: table,
            cost: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoreError {
    /// Mean load is zero, so relative balance is undefined.
    ZeroTotalLoad,
    /// A key was referenced that the snapshot does not contain.
    UnknownKey(KeyId),
    InvalidConfig,
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ZeroTotalLoad => write!(f, "total load is zero"),
            CoreError::UnknownKey(k) => write!(f, "key {k} not present in snapshot"),
            CoreError::InvalidConfig => write!(f, "invalid topology configuration"),
        }
    }
}

impl core::error::Error for CoreError {}

/// Total compute cost routed to instance `d` under `f`.
pub fn load(d: InstanceId, f: &AssignmentFunction, snap: &WorkloadSnapshot) -> u64 {
    snap.stats
        .values()
        .filter(|s| f.evaluate(s.key) == d)
        .map(|s| s.cost)
        .sum()
}

/// Per-instance loads for all instances in one pass.
pub fn loads(f: &AssignmentFunction, snap: &WorkloadSnapshot) -> Vec<u64> {
    let mut out = alloc::vec![0u64; f.n_downstream];
    for s in snap.stats.values() {
        out[f.evaluate(s.key).0] += s.cost;
    }
    out
}

pub fn mean_load(loads: &[u64]) -> f64 {
    if loads.is_empty() {
        return 0.0;
    }
    loads.iter().sum::<u64>() as f64 / loads.len() as f64
}

/// Relative deviation of instance `d`'s load from the mean: `|L(d) - L̄| / L̄`.
pub fn balance_indicator(
    d: InstanceId,
    f: &AssignmentFunction,
    snap: &WorkloadSnapshot,
) -> Result<f64, CoreError> {
    let all = loads(f, snap);
    let mean = mean_load(&all);
    if mean == 0.0 {
        return Err(CoreError::ZeroTotalLoad);
    }
    let l = all[d.0] as f64;
    Ok(libm::fabs(l - mean) / mean)
}

/// Largest two-sided balance indicator over a load vector.
pub fn max_indicator(loads: &[u64]) -> f64 {
    let mean = mean_load(loads);
    if mean == 0.0 {
        return 0.0;
    }
    loads
        .iter()
        .map(|&l| libm::fabs(l as f64 - mean) / mean)
        .fold(0.0, f64::max)
}

/// Largest one-sided overload ratio, `max_d (L(d) - L̄) / L̄`, clamped at zero.
pub fn overload_ratio(loads: &[u64]) -> f64 {
    let mean = mean_load(loads);
    if mean == 0.0 {
        return 0.0;
    }
    loads
        .iter()
        .map(|&l| (l as f64 - mean) / mean)
        .fold(0.0, f64::max)
}

/// Keys whose destination differs between two assignment functions.
pub fn delta<I>(f: &AssignmentFunction, f2: &AssignmentFunction, keys: I) -> BTreeSet<KeyId>
where
    I: IntoIterator<Item = KeyId>,
{
    debug_assert_eq!(f.n_downstream, f2.n_downstream);
    keys.into_iter()
        .filter(|&k| f.evaluate(k) != f2.evaluate(k))
        .collect()
}

/// Total windowed state memory of the keys in `delta`.
pub fn migration_cost(
    delta: &BTreeSet<KeyId>,
    snap: &WorkloadSnapshot,
    window: usize,
) -> Result<u64, CoreError> {
    let mut total = 0u64;
    for &k in delta {
        let stats = snap.stats.get(&k).ok_or(CoreError::UnknownKey(k))?;
        total += stats.windowed_memory(window);
    }
    Ok(total)
}
