//! Aggregated statistics records and value discretization.
//!
//! Per-key statistics are merged into records keyed on five dimensions —
//! planned destination, current destination, hash home, discretized compute
//! cost, and discretized windowed memory — with a count of the keys each
//! record stands for. The rebalancing algorithm then operates on record
//! units instead of individual keys, which keeps its input size bounded by
//! the product of instance counts and distinct value levels rather than the
//! key domain.
//!
//! Costs and memory values are discretized over a level series with a
//! fixed-gap linear head and a power-of-two tail. Mapping is greedy: each
//! value takes whichever bracketing level keeps the running deviation
//! closest to zero, so sums over discretized values track sums over true
//! values closely.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

use crate::balance::{gamma, SelectionCriterion};
use crate::model::{
    max_indicator, overload_ratio, AssignmentFunction, InstanceId, KeyId, MigrationPlan,
    RoutingTable, WorkloadSnapshot,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CompactError {
    InvalidInput(&'static str),
    /// A value not covered by any piecewise bin.
    OutOfRange(u64),
    /// A record asked for more concrete keys than the snapshot can supply.
    CountMismatch { needed: u64, available: u64 },
    /// Record placement could not finish; signals a degenerate input.
    NonTermination,
    /// No cleaning level satisfies the table capacity. Carries the
    /// full-cleaning fallback outcome.
    CapacityInfeasible(Box<CompactOutcome>),
}

impl fmt::Display for CompactError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompactError::InvalidInput(what) => write!(f, "invalid input: {what}"),
            CompactError::OutOfRange(v) => write!(f, "value {v} not covered by any bin"),
            CompactError::CountMismatch { needed, available } => {
                write!(f, "record needs {needed} keys but only {available} match")
            }
            CompactError::NonTermination => {
                write!(f, "record placement did not terminate within its budget")
            }
            CompactError::CapacityInfeasible(_) => {
                write!(f, "no cleaning level satisfies the routing table capacity")
            }
        }
    }
}

impl core::error::Error for CompactError {}

/// Strictly decreasing representative values: a linear head with gap
/// `R = 2^r` down to `R`, then the powers of two down to one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSeries {
    levels: Vec<u64>,
    pub r: u32,
    /// The level gap `R = 2^r`.
    pub step: u64,
    /// Number of linear levels, `⌊x_max / R⌋`.
    pub linear_count: u64,
}

impl LevelSeries {
    pub fn levels(&self) -> &[u64] {
        &self.levels
    }

    pub fn top(&self) -> u64 {
        self.levels[0]
    }
}

/// Builds the level series for values up to `x_max`.
pub fn build_levels(x_max: u64, r: u32) -> Result<LevelSeries, CompactError> {
    if x_max < 1 {
        return Err(CompactError::InvalidInput("x_max must be at least 1"));
    }
    if r >= 32 {
        return Err(CompactError::InvalidInput(
            "discretization exponent too large",
        ));
    }
    let step = 1u64 << r;
    let linear_count = x_max / step;
    let mut levels = Vec::with_capacity((linear_count + r as u64) as usize);
    for i in (1..=linear_count).rev() {
        levels.push(i * step);
    }
    for e in (0..r).rev() {
        levels.push(1u64 << e);
    }
    debug_assert!(levels.windows(2).all(|w| w[0] > w[1]));
    debug_assert_eq!(levels.last().copied(), Some(1));
    Ok(LevelSeries {
        levels,
        r,
        step,
        linear_count,
    })
}

/// Stateful greedy mapper from values onto a level series.
///
/// Values at or above the top level are truncated to it. Every other value
/// sits between two adjacent levels and takes whichever of the two leaves
/// the running accumulated deviation smallest in magnitude (ties prefer the
/// lower level). The accumulated deviation therefore never exceeds the
/// largest level gap `R`.
#[derive(Clone, Debug)]
pub struct Discretizer {
    pub series: LevelSeries,
    deviation: i64,
}

impl Discretizer {
    pub fn new(series: LevelSeries) -> Self {
        Self {
            series,
            deviation: 0,
        }
    }

    /// Builds a discretizer sized to the snapshot's largest compute cost.
    pub fn for_costs(snap: &WorkloadSnapshot, r: u32) -> Result<Self, CompactError> {
        let x_max = snap.stats.values().map(|s| s.cost.max(1)).max().unwrap_or(1);
        Ok(Self::new(build_levels(x_max, r)?))
    }

    /// Builds a discretizer sized to the snapshot's largest windowed memory.
    pub fn for_memory(
        snap: &WorkloadSnapshot,
        r: u32,
        window: usize,
    ) -> Result<Self, CompactError> {
        let x_max = snap
            .stats
            .values()
            .map(|s| s.windowed_memory(window).max(1))
            .max()
            .unwrap_or(1);
        Ok(Self::new(build_levels(x_max, r)?))
    }

    pub fn accumulated_deviation(&self) -> i64 {
        self.deviation
    }

    /// Maps one value. The caller feeds values in non-increasing order.
    pub fn represent(&mut self, x: u64) -> u64 {
        let levels = &self.series.levels;
        if x >= levels[0] {
            return levels[0];
        }
        // First index with level <= x; index 0 is excluded by the branch
        // above, so a higher neighbor always exists.
        let i = levels.partition_point(|&y| y > x);
        let hi = levels[i - 1];
        let lo = levels[i];
        debug_assert!(hi > x && x >= lo);
        let dev_hi = self.deviation + x as i64 - hi as i64;
        let dev_lo = self.deviation + x as i64 - lo as i64;
        let choice = if dev_hi.abs() < dev_lo.abs() { hi } else { lo };
        self.deviation += x as i64 - choice as i64;
        debug_assert!(self.deviation.unsigned_abs() <= self.series.step);
        choice
    }
}

/// Discretizes a non-increasing sequence of values, all at least one.
pub fn discretize(values: &[u64], disc: &mut Discretizer) -> Result<Vec<u64>, CompactError> {
    if values.windows(2).any(|w| w[0] < w[1]) {
        return Err(CompactError::InvalidInput("values must be non-increasing"));
    }
    if values.iter().any(|&v| v < 1) {
        return Err(CompactError::InvalidInput("values must be at least 1"));
    }
    Ok(values.iter().map(|&v| disc.represent(v)).collect())
}

/// One bin of a stateless piecewise-constant mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PiecewiseBin {
    pub lo: u64,
    pub hi: u64,
    pub representative: u64,
}

/// Maps each value to its bin's representative, independent of history.
pub fn naive_piecewise(values: &[u64], bins: &[PiecewiseBin]) -> Result<Vec<u64>, CompactError> {
    values
        .iter()
        .map(|&v| {
            bins.iter()
                .find(|b| b.lo <= v && v <= b.hi)
                .map(|b| b.representative)
                .ok_or(CompactError::OutOfRange(v))
        })
        .collect()
}

/// The five grouping dimensions of a record. `next` is the planned
/// destination; `None` marks a record whose keys are disassociated and
/// awaiting placement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RecordKey {
    pub next: Option<InstanceId>,
    pub current: InstanceId,
    pub hashed: InstanceId,
    pub cost_level: u64,
    pub mem_level: u64,
}

/// A record plus the number of keys it stands for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompactRecord {
    pub next: Option<InstanceId>,
    pub current: InstanceId,
    pub hashed: InstanceId,
    pub cost_level: u64,
    pub mem_level: u64,
    pub count: u64,
}

/// Collection of records, unique on the five-dimension key. Adding a record
/// with an existing key merges by summing counts, so the uniqueness
/// invariant holds by construction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CompactSpace {
    records: BTreeMap<RecordKey, u64>,
}

impl CompactSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, key: RecordKey, count: u64) {
        if count == 0 {
            return;
        }
        *self.records.entry(key).or_insert(0) += count;
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.records.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = CompactRecord> + '_ {
        self.records.iter().map(|(k, &count)| CompactRecord {
            next: k.next,
            current: k.current,
            hashed: k.hashed,
            cost_level: k.cost_level,
            mem_level: k.mem_level,
            count,
        })
    }

    /// Per-instance estimated loads: the count-weighted sum of cost levels
    /// by planned destination.
    pub fn estimated_loads(&self, n_downstream: usize) -> Vec<u64> {
        let mut out = alloc::vec![0u64; n_downstream];
        for (k, &count) in &self.records {
            if let Some(d) = k.next {
                out[d.0] += k.cost_level * count;
            }
        }
        out
    }
}

/// The discretized levels assigned to each key during compression; needed to
/// match records back to concrete keys.
#[derive(Clone, Debug, Default)]
pub struct KeyLevels {
    pub cost: BTreeMap<KeyId, u64>,
    pub mem: BTreeMap<KeyId, u64>,
}

/// Merges a snapshot into records under the given assignment. Values are
/// floored to one, sorted descending, and discretized in that order.
pub fn compress(
    snap: &WorkloadSnapshot,
    f: &AssignmentFunction,
    disc_c: &mut Discretizer,
    disc_s: &mut Discretizer,
    window: usize,
) -> (CompactSpace, KeyLevels) {
    let mut levels = KeyLevels::default();

    let mut by_cost: Vec<(u64, KeyId)> = snap
        .stats
        .values()
        .map(|s| (s.cost.max(1), s.key))
        .collect();
    by_cost.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (value, key) in by_cost {
        levels.cost.insert(key, disc_c.represent(value));
    }

    let mut by_mem: Vec<(u64, KeyId)> = snap
        .stats
        .values()
        .map(|s| (s.windowed_memory(window).max(1), s.key))
        .collect();
    by_mem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (value, key) in by_mem {
        levels.mem.insert(key, disc_s.represent(value));
    }

    let mut space = CompactSpace::new();
    for s in snap.stats.values() {
        let current = f.evaluate(s.key);
        space.add(
            RecordKey {
                next: Some(current),
                current,
                hashed: f.hash(s.key),
                cost_level: levels.cost[&s.key],
                mem_level: levels.mem[&s.key],
            },
            1,
        );
    }
    (space, levels)
}

/// Upper bound on the number of distinct records: `(N_D + 1) · N_D · N_D ·
/// |costs| · |memories|`, the extra slot admitting the unplaced marker.
pub fn space_bound(n_downstream: u64, distinct_costs: u64, distinct_mems: u64) -> u64 {
    (n_downstream + 1) * n_downstream * n_downstream * distinct_costs * distinct_mems
}

/// Result of running the mixed algorithm over records.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompactOutcome {
    /// Final records; every one carries a planned destination.
    pub space: CompactSpace,
    /// Per-instance count-weighted loads under the final plan.
    pub loads: Vec<u64>,
    /// Record units routed away from their hash home.
    pub table_units: u64,
    /// Units moved back during cleaning on the final pass.
    pub back_moves: u64,
    pub iterations: u64,
}

impl CompactOutcome {
    pub fn achieved_theta(&self) -> f64 {
        max_indicator(&self.loads)
    }

    pub fn achieved_overload(&self) -> f64 {
        overload_ratio(&self.loads)
    }
}

/// One unit class as seen by the selection comparators; mirrors the per-key
/// orderings so record-level choices match key-level ones whenever the
/// levels are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct UnitClass {
    cost: u64,
    mem: u64,
    current: InstanceId,
    hashed: InstanceId,
}

impl UnitClass {
    fn of(k: &RecordKey) -> Self {
        Self {
            cost: k.cost_level,
            mem: k.mem_level,
            current: k.current,
            hashed: k.hashed,
        }
    }
}

fn class_psi_cmp(psi: SelectionCriterion, a: &UnitClass, b: &UnitClass) -> Ordering {
    let primary = match psi {
        SelectionCriterion::HighestCost => b.cost.cmp(&a.cost).then(a.mem.cmp(&b.mem)),
        SelectionCriterion::LargestGamma { beta } => gamma(b.cost, b.mem, beta)
            .total_cmp(&gamma(a.cost, a.mem, beta))
            .then(b.cost.cmp(&a.cost))
            .then(a.mem.cmp(&b.mem)),
        SelectionCriterion::SmallestMemory => a.mem.cmp(&b.mem).then(a.cost.cmp(&b.cost)),
    };
    primary
        .then(a.current.cmp(&b.current))
        .then(a.hashed.cmp(&b.hashed))
}

/// Candidate pool order: descending cost, then the shared tie chain.
type PoolOrder = (Reverse<u64>, u64, InstanceId, InstanceId);

fn pool_order(c: &UnitClass) -> PoolOrder {
    (Reverse(c.cost), c.mem, c.current, c.hashed)
}

struct CompactEngine {
    n: usize,
    /// Assigned records: planned destination is set.
    live: BTreeMap<RecordKey, u64>,
    /// Disassociated unit classes awaiting placement.
    pool: BTreeMap<PoolOrder, (UnitClass, u64)>,
    est: Vec<u64>,
    l_max: f64,
    psi: SelectionCriterion,
    iterations: u64,
    budget: u64,
}

impl CompactEngine {
    fn push_pool(&mut self, class: UnitClass, count: u64) {
        if count == 0 {
            return;
        }
        let entry = self.pool.entry(pool_order(&class)).or_insert((class, 0));
        entry.1 += count;
    }

    fn take_unit(&mut self, key: &RecordKey) {
        let count = self.live.get_mut(key).expect("unit present");
        *count -= 1;
        if *count == 0 {
            self.live.remove(key);
        }
        self.est[key.next.expect("assigned").0] -= key.cost_level;
    }

    fn place_unit(&mut self, class: &UnitClass, d: InstanceId) {
        let key = RecordKey {
            next: Some(d),
            current: class.current,
            hashed: class.hashed,
            cost_level: class.cost,
            mem_level: class.mem,
        };
        *self.live.entry(key).or_insert(0) += 1;
        self.est[d.0] += class.cost;
    }

    fn assigned_to(&self, d: InstanceId) -> Vec<(RecordKey, UnitClass, u64)> {
        self.live
            .iter()
            .filter(|(k, _)| k.next == Some(d))
            .map(|(k, &count)| (*k, UnitClass::of(k), count))
            .collect()
    }

    /// Disassociates units from every overloaded instance in selection
    /// order until none exceeds the bound.
    fn prepare_candidates(&mut self) {
        for d in 0..self.n {
            if (self.est[d] as f64) <= self.l_max {
                continue;
            }
            let mut on_d = self.assigned_to(InstanceId(d));
            on_d.sort_by(|a, b| class_psi_cmp(self.psi, &a.1, &b.1));
            'outer: for (key, class, count) in on_d {
                for _ in 0..count {
                    if (self.est[d] as f64) <= self.l_max {
                        break 'outer;
                    }
                    self.take_unit(&key);
                    self.push_pool(class, 1);
                }
            }
        }
    }

    /// Exchange search mirroring the per-key variant: victim units cheaper
    /// than the incoming one, in selection order, until the instance fits.
    fn find_exchange(&self, incoming_cost: u64, d: InstanceId) -> Option<Vec<(RecordKey, u64)>> {
        let mut victims: Vec<(RecordKey, UnitClass, u64)> = self
            .assigned_to(d)
            .into_iter()
            .filter(|(k, _, _)| k.cost_level < incoming_cost)
            .collect();
        victims.sort_by(|a, b| class_psi_cmp(self.psi, &a.1, &b.1));
        let mut chosen: Vec<(RecordKey, u64)> = Vec::new();
        let mut new_load = self.est[d.0] + incoming_cost;
        'outer: for (key, class, count) in victims {
            let mut taken = 0u64;
            for _ in 0..count {
                if (new_load as f64) <= self.l_max {
                    break;
                }
                new_load -= class.cost;
                taken += 1;
            }
            if taken > 0 {
                chosen.push((key, taken));
            }
            if (new_load as f64) <= self.l_max {
                break 'outer;
            }
        }
        if (new_load as f64) <= self.l_max {
            Some(chosen)
        } else {
            None
        }
    }

    fn fit(&mut self) -> Result<(), CompactError> {
        while let Some((&order, &(class, _))) = self.pool.iter().next() {
            // Take one unit from the front class.
            {
                let entry = self.pool.get_mut(&order).expect("front class");
                entry.1 -= 1;
                if entry.1 == 0 {
                    self.pool.remove(&order);
                }
            }
            let mut by_load: Vec<usize> = (0..self.n).collect();
            by_load.sort_by_key(|&d| (self.est[d], d));
            let mut placed = false;
            for d in by_load {
                if self.iterations >= self.budget {
                    return Err(CompactError::NonTermination);
                }
                self.iterations += 1;
                if (self.est[d] + class.cost) as f64 <= self.l_max {
                    self.place_unit(&class, InstanceId(d));
                    placed = true;
                    break;
                }
                if let Some(victims) = self.find_exchange(class.cost, InstanceId(d)) {
                    for (key, taken) in victims {
                        let out_class = UnitClass::of(&key);
                        for _ in 0..taken {
                            self.take_unit(&key);
                        }
                        self.push_pool(out_class, taken);
                    }
                    self.place_unit(&class, InstanceId(d));
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(CompactError::NonTermination);
            }
        }
        Ok(())
    }

    fn table_units(&self) -> u64 {
        self.live
            .iter()
            .filter(|(k, _)| k.next != Some(k.hashed))
            .map(|(_, &count)| count)
            .sum()
    }
}

fn compact_pass(
    space: &CompactSpace,
    n_downstream: usize,
    theta_max: f64,
    psi: SelectionCriterion,
    back_moves: u64,
) -> Result<CompactOutcome, CompactError> {
    let total_units = space.total_count();
    let mut engine = CompactEngine {
        n: n_downstream,
        live: BTreeMap::new(),
        pool: BTreeMap::new(),
        est: alloc::vec![0; n_downstream],
        l_max: 0.0,
        psi,
        iterations: 0,
        budget: 64 * total_units.max(1),
    };

    let mut total_cost = 0u64;
    for (key, &count) in &space.records {
        total_cost += key.cost_level * count;
        match key.next {
            Some(d) => {
                *engine.live.entry(*key).or_insert(0) += count;
                engine.est[d.0] += key.cost_level * count;
            }
            None => {
                // Pre-disassociated candidates go straight to the pool,
                // merging with any same-class entries.
                engine.push_pool(UnitClass::of(key), count);
            }
        }
    }
    engine.l_max = (1.0 + theta_max) * (total_cost as f64 / n_downstream as f64);

    // Phase I: move back `back_moves` units, smallest memory first. A
    // back-move rewrites the planned destination to the hash home; nothing
    // migrates until the plan is materialized.
    let mut remaining = back_moves;
    if remaining > 0 {
        let mut in_table: Vec<(RecordKey, UnitClass, u64)> = engine
            .live
            .iter()
            .filter(|(k, _)| k.next != Some(k.hashed))
            .map(|(k, &count)| (*k, UnitClass::of(k), count))
            .collect();
        in_table.sort_by(|a, b| class_psi_cmp(SelectionCriterion::SmallestMemory, &a.1, &b.1));
        for (key, class, count) in in_table {
            if remaining == 0 {
                break;
            }
            let move_n = remaining.min(count);
            for _ in 0..move_n {
                engine.take_unit(&key);
                engine.place_unit(&class, class.hashed);
            }
            remaining -= move_n;
        }
    }

    // Phase II: disassociate from overloaded instances.
    engine.prepare_candidates();

    // Phase III: place.
    engine.fit()?;

    let mut final_space = CompactSpace::new();
    for (key, &count) in &engine.live {
        final_space.add(*key, count);
    }
    debug_assert_eq!(final_space.total_count(), total_units);
    Ok(CompactOutcome {
        table_units: engine.table_units(),
        loads: engine.est.clone(),
        space: final_space,
        back_moves,
        iterations: engine.iterations,
    })
}

/// The mixed algorithm over records: identical phase structure to the
/// per-key variant, with back-moves, candidate selection, and placement all
/// operating on record units.
pub fn compact_mixed(
    space: &CompactSpace,
    n_downstream: usize,
    theta_max: f64,
    beta: f64,
    table_capacity: u64,
) -> Result<CompactOutcome, CompactError> {
    let psi = SelectionCriterion::LargestGamma { beta };
    let in_table_units: u64 = space
        .iter()
        .filter(|r| r.next.is_some() && r.next != Some(r.hashed))
        .map(|r| r.count)
        .sum();
    let mut n_back = 0u64;
    let mut total_iterations = 0u64;
    loop {
        let mut outcome = compact_pass(space, n_downstream, theta_max, psi, n_back)?;
        total_iterations += outcome.iterations;
        outcome.iterations = total_iterations;
        if outcome.table_units <= table_capacity {
            return Ok(outcome);
        }
        if n_back >= in_table_units {
            let fallback = compact_pass(
                space,
                n_downstream,
                theta_max,
                SelectionCriterion::HighestCost,
                in_table_units,
            )?;
            return Err(CompactError::CapacityInfeasible(Box::new(fallback)));
        }
        n_back = (n_back + (outcome.table_units - table_capacity)).min(in_table_units);
    }
}

/// Materializes a compact outcome into a concrete migration plan.
///
/// For every record whose planned destination differs from its current one,
/// `count` keys matching the record's current destination, hash home, and
/// levels are selected in `psi` order (key id breaking ties) and added to
/// the migration set. The new table is derived from the updated assignment
/// and the hash function.
pub fn expand(
    outcome: &CompactOutcome,
    snap: &WorkloadSnapshot,
    f: &AssignmentFunction,
    psi: SelectionCriterion,
    levels: &KeyLevels,
    window: usize,
) -> Result<MigrationPlan, CompactError> {
    // Group matching keys by the four observable dimensions.
    type Group = (InstanceId, InstanceId, u64, u64);
    let mut pools: BTreeMap<Group, Vec<KeyId>> = BTreeMap::new();
    for s in snap.stats.values() {
        let group = (
            f.evaluate(s.key),
            f.hash(s.key),
            levels.cost[&s.key],
            levels.mem[&s.key],
        );
        pools.entry(group).or_default().push(s.key);
    }
    // Order each pool by the selection criterion over true values, key id
    // breaking ties.
    for ((current, hashed, _, _), keys) in pools.iter_mut() {
        keys.sort_by(|&a, &b| {
            let sa = &snap.stats[&a];
            let sb = &snap.stats[&b];
            let ca = UnitClass {
                cost: sa.cost.max(1),
                mem: sa.windowed_memory(window).max(1),
                current: *current,
                hashed: *hashed,
            };
            let cb = UnitClass {
                cost: sb.cost.max(1),
                mem: sb.windowed_memory(window).max(1),
                current: *current,
                hashed: *hashed,
            };
            class_psi_cmp(psi, &ca, &cb).then(a.cmp(&b))
        });
    }

    let mut moves: BTreeMap<KeyId, InstanceId> = BTreeMap::new();
    let mut taken: BTreeMap<Group, usize> = BTreeMap::new();
    for record in outcome.space.iter() {
        let next = record
            .next
            .ok_or(CompactError::InvalidInput("record without destination"))?;
        if next == record.current {
            continue;
        }
        let group = (
            record.current,
            record.hashed,
            record.cost_level,
            record.mem_level,
        );
        let pool = pools.get(&group).map(|v| v.as_slice()).unwrap_or(&[]);
        let offset = taken.entry(group).or_insert(0);
        let available = pool.len().saturating_sub(*offset) as u64;
        if available < record.count {
            return Err(CompactError::CountMismatch {
                needed: record.count,
                available,
            });
        }
        for &key in &pool[*offset..*offset + record.count as usize] {
            moves.insert(key, next);
        }
        *offset += record.count as usize;
    }

    let universe: BTreeSet<KeyId> = snap
        .keys()
        .chain(f.table.iter().map(|(k, _)| k))
        .collect();
    let mut new_table = RoutingTable::new(f.table.capacity);
    let mut delta = BTreeSet::new();
    let mut cost = 0u64;
    for &key in &universe {
        let dest = match moves.get(&key) {
            Some(&d) => d,
            None => f.evaluate(key),
        };
        new_table.set(key, dest, f.n_downstream);
        if dest != f.evaluate(key) {
            delta.insert(key);
            if let Some(s) = snap.stats.get(&key) {
                cost += s.windowed_memory(window);
            }
        }
    }
    Ok(MigrationPlan {
        delta,
        new_table,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance;
    use crate::fixtures::keys_hashing_to;
    use crate::model::KeyIntervalStats;
    use crate::rng::Rng;
    use alloc::vec;

    #[test]
    fn levels_for_eight_with_exponent_two() {
        let s = build_levels(8, 2).unwrap();
        assert_eq!(s.levels(), &[8, 4, 2, 1]);
        assert_eq!(s.step, 4);
        assert_eq!(s.linear_count, 2);
    }

    #[test]
    fn levels_with_unit_gap_are_all_integers() {
        let s = build_levels(5, 0).unwrap();
        assert_eq!(s.levels(), &[5, 4, 3, 2, 1]);
    }

    #[test]
    fn levels_for_twenty_with_exponent_three() {
        // Linear head {16, 8}, then the power tail {4, 2, 1}.
        let s = build_levels(20, 3).unwrap();
        assert_eq!(s.levels(), &[16, 8, 4, 2, 1]);
        assert_eq!(s.linear_count, 2);
        assert_eq!(s.levels().len(), 5);
    }

    #[test]
    fn levels_reject_zero_maximum() {
        assert!(matches!(
            build_levels(0, 2),
            Err(CompactError::InvalidInput(_))
        ));
    }

    #[test]
    fn discretize_worked_sequence_cancels_exactly() {
        // Ten costs (8,6,3,2,2,1,1,1,1,1) with gap 4: the third value maps
        // up to 4 because the running deviation is positive, and the greedy
        // finishes with zero total deviation.
        let mut disc = Discretizer::new(build_levels(8, 2).unwrap());
        let values = [8u64, 6, 3, 2, 2, 1, 1, 1, 1, 1];
        let mapped = discretize(&values, &mut disc).unwrap();
        assert_eq!(mapped[2], 4);
        assert_eq!(disc.accumulated_deviation(), 0);
        let true_dev: i64 = values
            .iter()
            .zip(&mapped)
            .map(|(&x, &y)| x as i64 - y as i64)
            .sum();
        assert_eq!(true_dev, 0);
    }

    #[test]
    fn discretize_exact_levels_keep_zero_deviation() {
        let mut disc = Discretizer::new(build_levels(16, 2).unwrap());
        let values = [16u64, 12, 8, 4, 4, 2, 1, 1];
        let mapped = discretize(&values, &mut disc).unwrap();
        assert_eq!(mapped.as_slice(), values.as_slice());
        assert_eq!(disc.accumulated_deviation(), 0);
    }

    #[test]
    fn discretize_rejects_unsorted_or_small_values() {
        let mut disc = Discretizer::new(build_levels(8, 1).unwrap());
        assert!(matches!(
            discretize(&[3, 5], &mut disc),
            Err(CompactError::InvalidInput(_))
        ));
        assert!(matches!(
            discretize(&[3, 0], &mut disc),
            Err(CompactError::InvalidInput(_))
        ));
    }

    #[test]
    fn deviation_stays_within_gap_exhaustively() {
        // Every non-increasing sequence of length <= 3 over values 1..=12,
        // for r in {0, 1, 2}: the tracked deviation never exceeds R after
        // any step. (The acceptance suite runs the full-size domain.)
        fn check(seq: &[u64]) {
            for r in [0u32, 1, 2] {
                let mut disc = Discretizer::new(build_levels(seq[0], r).unwrap());
                for &v in seq {
                    disc.represent(v);
                    assert!(
                        disc.accumulated_deviation().unsigned_abs() <= disc.series.step,
                        "seq {seq:?} r {r}"
                    );
                }
            }
        }
        for a in 1..=12u64 {
            check(&[a]);
            for b in 1..=a {
                check(&[a, b]);
                for c in 1..=b {
                    check(&[a, b, c]);
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn mapped_values_are_bracketing_levels(
            mut values in proptest::collection::vec(1u64..500, 1..60),
            r in 0u32..6,
        ) {
            values.sort_unstable_by(|a, b| b.cmp(a));
            let series = build_levels(values[0], r).unwrap();
            let levels = series.levels().to_vec();
            let mut disc = Discretizer::new(series);
            let mapped = discretize(&values, &mut disc).unwrap();
            for (&x, &y) in values.iter().zip(&mapped) {
                // Every output is a level, and either the top level (for
                // values at or above it) or one of the two levels
                // bracketing the input.
                proptest::prop_assert!(levels.contains(&y));
                if x >= levels[0] {
                    proptest::prop_assert_eq!(y, levels[0]);
                } else {
                    let i = levels.partition_point(|&l| l > x);
                    proptest::prop_assert!(y == levels[i] || y == levels[i - 1]);
                }
            }
        }
    }

    #[test]
    fn deviation_is_negligible_on_skewed_cost_sequences() {
        // Statistical check on realistic inputs: across skews and domain
        // sizes, the final accumulated deviation is a vanishing fraction of
        // the total value mass.
        for &(skew, keys) in &[(0.5f64, 1000u64), (0.85, 1000), (0.85, 10_000), (1.0, 5000)] {
            let cfg = crate::workload::GeneratorConfig {
                key_count: keys,
                skew,
                fluctuation: 0.0,
                tuples_per_interval: 100 * keys,
                cost_per_tuple: 1,
                mem_per_tuple: 1,
                seed: 9,
            };
            let snap = crate::workload::zipf_interval(&cfg, 0);
            let mut values: Vec<u64> = snap.stats.values().map(|s| s.cost.max(1)).collect();
            values.sort_unstable_by(|a, b| b.cmp(a));
            let total: u64 = values.iter().sum();
            for r in [2u32, 3, 5] {
                let mut disc = Discretizer::new(build_levels(values[0], r).unwrap());
                discretize(&values, &mut disc).unwrap();
                let ratio =
                    disc.accumulated_deviation().unsigned_abs() as f64 / total as f64;
                assert!(
                    ratio <= 0.01,
                    "skew {skew} keys {keys} r {r}: deviation fraction {ratio}"
                );
            }
        }
    }

    #[test]
    fn piecewise_bins_accumulate_deviation() {
        // Stateless bins over the same ten costs leave |total| = 3.
        let bins = [
            PiecewiseBin {
                lo: 1,
                hi: 3,
                representative: 2,
            },
            PiecewiseBin {
                lo: 4,
                hi: 6,
                representative: 5,
            },
            PiecewiseBin {
                lo: 7,
                hi: 9,
                representative: 8,
            },
        ];
        let values = [8u64, 6, 3, 2, 2, 1, 1, 1, 1, 1];
        let mapped = naive_piecewise(&values, &bins).unwrap();
        let dev: i64 = values
            .iter()
            .zip(&mapped)
            .map(|(&x, &y)| x as i64 - y as i64)
            .sum();
        assert_eq!(dev.abs(), 3);
    }

    #[test]
    fn piecewise_exact_representatives_cancel() {
        let bins = [PiecewiseBin {
            lo: 1,
            hi: 10,
            representative: 5,
        }];
        let mapped = naive_piecewise(&[5, 5, 5], &bins).unwrap();
        assert_eq!(mapped, vec![5, 5, 5]);
    }

    #[test]
    fn piecewise_is_order_independent() {
        let bins = [
            PiecewiseBin {
                lo: 1,
                hi: 4,
                representative: 2,
            },
            PiecewiseBin {
                lo: 5,
                hi: 9,
                representative: 7,
            },
        ];
        let a = naive_piecewise(&[9, 3, 6, 1], &bins).unwrap();
        let b = naive_piecewise(&[1, 6, 3, 9], &bins).unwrap();
        assert_eq!(a[0], b[3]);
        assert_eq!(a[1], b[2]);
        assert_eq!(a[2], b[1]);
        assert_eq!(a[3], b[0]);
    }

    #[test]
    fn piecewise_rejects_uncovered_values() {
        let bins = [PiecewiseBin {
            lo: 1,
            hi: 3,
            representative: 2,
        }];
        assert_eq!(naive_piecewise(&[4], &bins), Err(CompactError::OutOfRange(4)));
    }

    #[test]
    fn compress_merges_identical_keys() {
        // Two keys with the same destinations and levels collapse into one
        // record with count 2.
        let n = 2;
        let keys = keys_hashing_to(n, &[0, 0]);
        let mut snap = WorkloadSnapshot::new(0);
        for &k in &keys {
            snap.insert(KeyIntervalStats::new(k, 4, 4, 4));
        }
        let mut table = RoutingTable::new(10);
        for &k in &keys {
            table.set(k, InstanceId(1), n);
        }
        let f = AssignmentFunction::new(table, n);
        let mut dc = Discretizer::for_costs(&snap, 0).unwrap();
        let mut ds = Discretizer::for_memory(&snap, 0, 1).unwrap();
        let (space, _) = compress(&snap, &f, &mut dc, &mut ds, 1);
        assert_eq!(space.len(), 1);
        let rec = space.iter().next().unwrap();
        assert_eq!(rec.count, 2);
        assert_eq!(rec.current, InstanceId(1));
        assert_eq!(rec.hashed, InstanceId(0));
        assert_eq!(rec.next, Some(InstanceId(1)));
        assert_eq!(rec.cost_level, 4);
        assert_eq!(rec.mem_level, 4);
    }

    #[test]
    fn compress_of_empty_snapshot_is_empty() {
        let snap = WorkloadSnapshot::new(0);
        let f = AssignmentFunction::hash_only(3);
        let mut dc = Discretizer::new(build_levels(1, 0).unwrap());
        let mut ds = Discretizer::new(build_levels(1, 0).unwrap());
        let (space, levels) = compress(&snap, &f, &mut dc, &mut ds, 1);
        assert!(space.is_empty());
        assert!(levels.cost.is_empty());
    }

    #[test]
    fn compress_with_unit_gap_reproduces_loads_exactly() {
        let n = 3;
        let mut snap = WorkloadSnapshot::new(0);
        let mut rng = Rng::new(31);
        for id in 0..200u64 {
            let c = 1 + rng.next_below(50);
            let m = 1 + rng.next_below(30);
            snap.insert(KeyIntervalStats::new(KeyId(id), c, c, m));
        }
        let f = AssignmentFunction::hash_only(n);
        let mut dc = Discretizer::for_costs(&snap, 0).unwrap();
        let mut ds = Discretizer::for_memory(&snap, 0, 1).unwrap();
        let (space, _) = compress(&snap, &f, &mut dc, &mut ds, 1);
        assert_eq!(space.estimated_loads(n), crate::model::loads(&f, &snap));
        assert_eq!(space.total_count(), snap.len() as u64);
    }

    #[test]
    fn space_bound_examples() {
        assert_eq!(space_bound(1, 1, 1), 2);
        assert_eq!(space_bound(15, 8, 8), 230_400);
    }

    #[test]
    fn compress_never_exceeds_space_bound() {
        let n = 4;
        let mut snap = WorkloadSnapshot::new(0);
        let mut rng = Rng::new(77);
        for id in 0..300u64 {
            let c = 1 + rng.next_below(100);
            snap.insert(KeyIntervalStats::new(
                KeyId(id),
                c,
                c,
                1 + rng.next_below(60),
            ));
        }
        let f = AssignmentFunction::hash_only(n);
        let mut dc = Discretizer::for_costs(&snap, 2).unwrap();
        let mut ds = Discretizer::for_memory(&snap, 2, 1).unwrap();
        let (space, levels) = compress(&snap, &f, &mut dc, &mut ds, 1);
        let distinct_c: BTreeSet<_> = levels.cost.values().collect();
        let distinct_s: BTreeSet<_> = levels.mem.values().collect();
        assert!(
            (space.len() as u64)
                <= space_bound(n as u64, distinct_c.len() as u64, distinct_s.len() as u64)
        );
    }

    #[test]
    fn merging_identical_records_sums_counts() {
        let mut space = CompactSpace::new();
        let key = RecordKey {
            next: Some(InstanceId(0)),
            current: InstanceId(1),
            hashed: InstanceId(0),
            cost_level: 4,
            mem_level: 4,
        };
        space.add(key, 1);
        space.add(key, 2);
        assert_eq!(space.len(), 1);
        assert_eq!(space.total_count(), 3);
    }

    #[test]
    fn balanced_space_stays_untouched() {
        let mut space = CompactSpace::new();
        for d in 0..3usize {
            space.add(
                RecordKey {
                    next: Some(InstanceId(d)),
                    current: InstanceId(d),
                    hashed: InstanceId(d),
                    cost_level: 10,
                    mem_level: 5,
                },
                4,
            );
        }
        let out = compact_mixed(&space, 3, 0.0, 1.0, 100).unwrap();
        assert_eq!(out.loads, vec![40, 40, 40]);
        for rec in out.space.iter() {
            assert_eq!(rec.next, Some(rec.current));
        }
        assert_eq!(out.table_units, 0);
    }

    #[test]
    fn predisassociated_records_merge_into_the_pool() {
        // An input record already marked unplaced shares its class with
        // units the overload phase strips from the same instance; both are
        // pooled together, every key ends up placed, and the count is
        // conserved.
        let mut space = CompactSpace::new();
        space.add(
            RecordKey {
                next: None,
                current: InstanceId(1),
                hashed: InstanceId(0),
                cost_level: 4,
                mem_level: 4,
            },
            2,
        );
        space.add(
            RecordKey {
                next: Some(InstanceId(1)),
                current: InstanceId(1),
                hashed: InstanceId(0),
                cost_level: 4,
                mem_level: 4,
            },
            6,
        );
        let out = compact_mixed(&space, 2, 0.0, 1.0, 100).unwrap();
        assert_eq!(out.space.total_count(), 8);
        assert_eq!(out.loads, vec![16, 16]);
        for rec in out.space.iter() {
            assert!(rec.next.is_some());
        }
    }

    #[test]
    fn count_is_conserved_through_rebalancing() {
        let mut space = CompactSpace::new();
        let mut rng = Rng::new(4242);
        let n = 4usize;
        for _ in 0..30 {
            let current = InstanceId(rng.next_below(n as u64) as usize);
            let hashed = InstanceId(rng.next_below(n as u64) as usize);
            space.add(
                RecordKey {
                    next: Some(current),
                    current,
                    hashed,
                    cost_level: 1 + rng.next_below(16),
                    mem_level: 1 + rng.next_below(16),
                },
                1 + rng.next_below(5),
            );
        }
        let before = space.total_count();
        let out = compact_mixed(&space, n, 0.2, 1.0, u64::MAX).unwrap();
        assert_eq!(out.space.total_count(), before);
    }

    fn random_instance(
        rng: &mut Rng,
        key_count: u64,
        n: usize,
    ) -> (WorkloadSnapshot, AssignmentFunction) {
        let mut snap = WorkloadSnapshot::new(0);
        let mut table = RoutingTable::new(10_000);
        for id in 0..key_count {
            let k = KeyId(id);
            let c = 1 + rng.next_below(40);
            let m = 1 + rng.next_below(25);
            snap.insert(KeyIntervalStats::new(k, c, c, m));
            if rng.next_below(4) == 0 {
                table.set(k, InstanceId(rng.next_below(n as u64) as usize), n);
            }
        }
        (snap, AssignmentFunction::new(table, n))
    }

    #[test]
    fn exact_levels_make_record_path_match_key_path() {
        // With unit-gap discretizers the records are exact, so the record
        // algorithm must land on the same loads and table size as the
        // per-key algorithm, and expansion must reproduce the same plan
        // aggregates.
        let mut rng = Rng::new(808);
        for round in 0..25 {
            let n = 2 + rng.next_below(4) as usize;
            let key_count = 20 + rng.next_below(120);
            let (snap, f) = random_instance(&mut rng, key_count, n);
            let theta = 0.1;
            let beta = 1.5;
            let capacity = 1 + rng.next_below(30);

            let full = balance::mixed(&f, &snap, 1, theta, beta, capacity as usize);
            let mut dc = Discretizer::for_costs(&snap, 0).unwrap();
            let mut ds = Discretizer::for_memory(&snap, 0, 1).unwrap();
            let (space, levels) = compress(&snap, &f, &mut dc, &mut ds, 1);
            let rec = compact_mixed(&space, n, theta, beta, capacity);

            match (full, rec) {
                (Ok(full), Ok(rec)) => {
                    assert_eq!(rec.loads, full.loads, "round {round}");
                    assert_eq!(rec.table_units, full.new_table.len() as u64, "round {round}");
                    let plan = expand(
                        &rec,
                        &snap,
                        &f,
                        SelectionCriterion::LargestGamma { beta },
                        &levels,
                        1,
                    )
                    .unwrap();
                    assert_eq!(plan.new_table.len(), full.new_table.len());
                    let f2 = AssignmentFunction::new(plan.new_table.clone(), n);
                    assert_eq!(crate::model::loads(&f2, &snap), full.loads);
                    assert_eq!(plan.cost, full.plan.cost, "round {round}");
                    // Move multiset equivalence: the same number of keys
                    // travels between every (source, destination) pair.
                    let pair_counts = |delta: &alloc::collections::BTreeSet<KeyId>,
                                       to: &AssignmentFunction|
                     -> BTreeMap<(InstanceId, InstanceId), u64> {
                        let mut counts = BTreeMap::new();
                        for &k in delta {
                            *counts.entry((f.evaluate(k), to.evaluate(k))).or_insert(0) += 1;
                        }
                        counts
                    };
                    let full_f2 = AssignmentFunction::new(full.new_table.clone(), n);
                    assert_eq!(
                        pair_counts(&plan.delta, &f2),
                        pair_counts(&full.plan.delta, &full_f2),
                        "round {round}: per-pair move counts differ"
                    );
                }
                (Err(_), Err(_)) => {}
                (full, rec) => {
                    panic!("round {round}: paths disagree on feasibility: {full:?} vs {rec:?}")
                }
            }
        }
    }

    #[test]
    fn expand_move_back_deletes_entries() {
        // A record planned back to its hash home removes both keys' table
        // entries.
        let n = 2;
        let keys = keys_hashing_to(n, &[0, 0]);
        let mut snap = WorkloadSnapshot::new(0);
        for &k in &keys {
            snap.insert(KeyIntervalStats::new(k, 4, 4, 4));
        }
        let mut table = RoutingTable::new(10);
        for &k in &keys {
            table.set(k, InstanceId(1), n);
        }
        let f = AssignmentFunction::new(table, n);
        let mut dc = Discretizer::for_costs(&snap, 0).unwrap();
        let mut ds = Discretizer::for_memory(&snap, 0, 1).unwrap();
        let (_, levels) = compress(&snap, &f, &mut dc, &mut ds, 1);

        let mut final_space = CompactSpace::new();
        final_space.add(
            RecordKey {
                next: Some(InstanceId(0)), // back to the hash home
                current: InstanceId(1),
                hashed: InstanceId(0),
                cost_level: 4,
                mem_level: 4,
            },
            2,
        );
        let outcome = CompactOutcome {
            space: final_space,
            loads: vec![8, 0],
            table_units: 0,
            back_moves: 2,
            iterations: 0,
        };
        let plan = expand(
            &outcome,
            &snap,
            &f,
            SelectionCriterion::HighestCost,
            &levels,
            1,
        )
        .unwrap();
        assert_eq!(plan.delta.len(), 2);
        assert!(plan.new_table.is_empty());
        assert_eq!(plan.cost, 8);
    }

    #[test]
    fn expand_without_moves_is_empty() {
        let n = 2;
        let keys = keys_hashing_to(n, &[0, 1]);
        let mut snap = WorkloadSnapshot::new(0);
        for &k in &keys {
            snap.insert(KeyIntervalStats::new(k, 3, 3, 3));
        }
        let f = AssignmentFunction::hash_only(n);
        let mut dc = Discretizer::for_costs(&snap, 0).unwrap();
        let mut ds = Discretizer::for_memory(&snap, 0, 1).unwrap();
        let (space, levels) = compress(&snap, &f, &mut dc, &mut ds, 1);
        let outcome = CompactOutcome {
            loads: space.estimated_loads(n),
            space,
            table_units: 0,
            back_moves: 0,
            iterations: 0,
        };
        let plan = expand(
            &outcome,
            &snap,
            &f,
            SelectionCriterion::HighestCost,
            &levels,
            1,
        )
        .unwrap();
        assert!(plan.delta.is_empty());
        assert_eq!(plan.cost, 0);
        assert!(plan.new_table.is_empty());
    }

    #[test]
    fn expand_reports_count_mismatch() {
        let n = 2;
        let keys = keys_hashing_to(n, &[0]);
        let mut snap = WorkloadSnapshot::new(0);
        snap.insert(KeyIntervalStats::new(keys[0], 4, 4, 4));
        let f = AssignmentFunction::hash_only(n);
        let mut dc = Discretizer::for_costs(&snap, 0).unwrap();
        let mut ds = Discretizer::for_memory(&snap, 0, 1).unwrap();
        let (_, levels) = compress(&snap, &f, &mut dc, &mut ds, 1);
        let mut final_space = CompactSpace::new();
        final_space.add(
            RecordKey {
                next: Some(InstanceId(1)),
                current: InstanceId(0),
                hashed: InstanceId(0),
                cost_level: 4,
                mem_level: 4,
            },
            3, // only one key matches
        );
        let outcome = CompactOutcome {
            space: final_space,
            loads: vec![0, 12],
            table_units: 3,
            back_moves: 0,
            iterations: 0,
        };
        let err = expand(
            &outcome,
            &snap,
            &f,
            SelectionCriterion::HighestCost,
            &levels,
            1,
        )
        .unwrap_err();
        assert_eq!(
            err,
            CompactError::CountMismatch {
                needed: 3,
                available: 1
            }
        );
    }
}
