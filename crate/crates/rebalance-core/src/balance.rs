//! The rebalancing algorithm family: the least-load-fit-decreasing placement
//! subroutine with exchange, the table-minimizing and migration-minimizing
//! heuristics, the capacity-bounded mixed algorithm, its brute-force
//! counterpart, and the plain greedy assignment used as a quality baseline.
//!
//! Every algorithm is a pure function from an assignment function and a
//! workload snapshot to a [`BalanceOutcome`]; nothing here mutates shared
//! state, so concurrent invocations need no coordination.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};
use core::fmt;

use crate::model::{
    hash_key, max_indicator, migration_cost, overload_ratio, AssignmentFunction, InstanceId,
    KeyId, MigrationPlan, RoutingTable, WorkloadSnapshot,
};

/// Key selection criterion used when disassociating keys from overloaded
/// instances and when choosing exchange victims.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectionCriterion {
    /// Highest compute cost first.
    HighestCost,
    /// Largest migration priority `cost^beta / windowed_mem` first.
    LargestGamma { beta: f64 },
    /// Smallest windowed memory first.
    SmallestMemory,
}

/// Migration priority of a key: compute benefit per unit of state moved.
/// Memory is floored to one so stateless keys stay finite.
pub fn gamma(cost: u64, windowed_mem: u64, beta: f64) -> f64 {
    libm::pow(cost as f64, beta) / windowed_mem.max(1) as f64
}

/// A key that has been disassociated from its instance and awaits placement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CandidateKey {
    pub key: KeyId,
    pub cost: u64,
    /// Windowed memory, floored to one.
    pub windowed_mem: u64,
    /// The instance this key was disassociated from.
    pub origin: InstanceId,
}

/// Result of one rebalancing invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceOutcome {
    pub new_table: RoutingTable,
    pub plan: MigrationPlan,
    /// Largest two-sided balance indicator under the new assignment.
    pub achieved_theta: f64,
    /// Largest one-sided overload ratio under the new assignment.
    pub achieved_overload: f64,
    /// Table entries moved back during cleaning (cumulative for the mixed
    /// algorithm's final pass).
    pub back_moves: usize,
    /// Placement attempts performed by the fitting subroutine.
    pub iterations: u64,
    /// Per-instance loads under the new assignment.
    pub loads: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BalanceError {
    /// The fitting subroutine could not place a key on any instance, or
    /// exceeded its attempt budget; signals a degenerate input.
    NonTermination,
    /// Even moving back every table entry cannot satisfy the capacity bound.
    /// Carries the table-minimizing fallback outcome, which the caller may
    /// still apply.
    CapacityInfeasible(Box<BalanceOutcome>),
}

impl fmt::Display for BalanceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BalanceError::NonTermination => {
                write!(f, "placement did not terminate within its budget")
            }
            BalanceError::CapacityInfeasible(_) => {
                write!(f, "no cleaning level satisfies the routing table capacity")
            }
        }
    }
}

impl core::error::Error for BalanceError {}

/// Decision returned by [`adjust`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AdjustDecision {
    Accept,
    /// Accept after exchanging the listed keys off the instance.
    AcceptWithExchange(Vec<KeyId>),
    Reject,
}

/// One key as seen by the selection comparators.
#[derive(Clone, Copy, Debug)]
struct Unit {
    key: KeyId,
    cost: u64,
    mem: u64,
    /// Destination during the reporting interval (before any cleaning).
    anchor: InstanceId,
    hashed: InstanceId,
}

/// Selection order for a criterion, precomputed per key so ordered sets can
/// hold it directly: three monotone-ascending words followed by the
/// deterministic tie chain (reporting-time destination, hash home, key id).
/// The shared tie chain lets the record-space variant make identical
/// choices.
///
/// Descending fields are encoded with bitwise complement; the priority index
/// is non-negative, so its IEEE bit pattern orders like the value.
type PsiRank = (u64, u64, u64, InstanceId, InstanceId, KeyId);

fn psi_rank(psi: SelectionCriterion, u: &Unit) -> PsiRank {
    match psi {
        // Cost descending, then memory ascending.
        SelectionCriterion::HighestCost => (!u.cost, u.mem, 0, u.anchor, u.hashed, u.key),
        // Priority descending, then cost descending, then memory ascending.
        SelectionCriterion::LargestGamma { beta } => {
            let g = gamma(u.cost, u.mem, beta);
            debug_assert!(g >= 0.0);
            (!g.to_bits(), !u.cost, u.mem, u.anchor, u.hashed, u.key)
        }
        // Memory ascending, then cost ascending.
        SelectionCriterion::SmallestMemory => (u.mem, u.cost, 0, u.anchor, u.hashed, u.key),
    }
}

fn psi_cmp(psi: SelectionCriterion, a: &Unit, b: &Unit) -> Ordering {
    psi_rank(psi, a).cmp(&psi_rank(psi, b))
}

/// Candidate processing order: descending cost, then the same deterministic
/// tie chain as the selection criteria.
type CandOrder = (Reverse<u64>, u64, InstanceId, InstanceId, KeyId);

fn cand_order(u: &Unit) -> CandOrder {
    (Reverse(u.cost), u.mem, u.anchor, u.hashed, u.key)
}

/// Cleaning performed before candidate selection.
#[derive(Clone, Copy, Debug)]
enum Cleaning {
    None,
    All,
    BackMoves(usize),
}

struct Engine {
    n: usize,
    /// Precomputed stats for every key in the working universe; `anchor` is
    /// the reporting-time destination.
    units: BTreeMap<KeyId, Unit>,
    /// Working destination of every currently associated key.
    dest: BTreeMap<KeyId, InstanceId>,
    /// Per-instance members kept in selection order so candidate and victim
    /// walks need no sorting.
    members: Vec<BTreeSet<PsiRank>>,
    est: Vec<u64>,
    l_max: f64,
    psi: SelectionCriterion,
    candidates: BTreeMap<CandOrder, CandidateKey>,
    iterations: u64,
    budget: u64,
}

impl Engine {
    fn new(
        snap: &WorkloadSnapshot,
        window: usize,
        n: usize,
        psi: SelectionCriterion,
        universe: impl Iterator<Item = (KeyId, InstanceId)>,
    ) -> Self {
        let mut units = BTreeMap::new();
        for (key, anchor) in universe {
            let (cost, mem) = snap
                .stats
                .get(&key)
                .map(|s| (s.cost, s.windowed_memory(window).max(1)))
                .unwrap_or((0, 1));
            units.insert(
                key,
                Unit {
                    key,
                    cost,
                    mem,
                    anchor,
                    hashed: hash_key(key, n),
                },
            );
        }
        let budget = placement_budget(units.len());
        Self {
            n,
            units,
            dest: BTreeMap::new(),
            members: alloc::vec![BTreeSet::new(); n],
            est: alloc::vec![0; n],
            l_max: 0.0,
            psi,
            candidates: BTreeMap::new(),
            iterations: 0,
            budget,
        }
    }

    fn unit(&self, key: KeyId) -> Unit {
        self.units[&key]
    }

    fn place(&mut self, key: KeyId, d: InstanceId) {
        let unit = self.units[&key];
        self.dest.insert(key, d);
        self.members[d.0].insert(psi_rank(self.psi, &unit));
        self.est[d.0] += unit.cost;
    }

    fn disassociate(&mut self, key: KeyId, d: InstanceId) -> CandidateKey {
        let unit = self.units[&key];
        self.dest.remove(&key);
        self.members[d.0].remove(&psi_rank(self.psi, &unit));
        self.est[d.0] -= unit.cost;
        CandidateKey {
            key,
            cost: unit.cost,
            windowed_mem: unit.mem,
            origin: d,
        }
    }

    fn push_candidate(&mut self, cand: CandidateKey) {
        // The snapshot-derived unit is the single source of truth for the
        // candidate's stats; only its origin is caller state.
        let unit = self.units[&cand.key];
        self.candidates.insert(
            cand_order(&unit),
            CandidateKey {
                key: cand.key,
                cost: unit.cost,
                windowed_mem: unit.mem,
                origin: cand.origin,
            },
        );
    }

    /// Disassociates keys from every overloaded instance, in selection
    /// order, until none exceeds the load bound.
    fn prepare_candidates(&mut self) {
        for d in 0..self.n {
            if (self.est[d] as f64) <= self.l_max {
                continue;
            }
            let on_d: Vec<KeyId> = self.members[d].iter().map(|r| r.5).collect();
            for key in on_d {
                if (self.est[d] as f64) <= self.l_max {
                    break;
                }
                let cand = self.disassociate(key, InstanceId(d));
                self.push_candidate(cand);
            }
        }
    }

    /// Exchange search: victims on `d` cheaper than the incoming key, taken
    /// in selection order until the instance fits under the load bound.
    fn find_exchange(&self, incoming_cost: u64, d: InstanceId) -> Option<Vec<KeyId>> {
        let mut chosen = Vec::new();
        let mut new_load = self.est[d.0] + incoming_cost;
        for rank in self.members[d.0].iter() {
            if (new_load as f64) <= self.l_max {
                break;
            }
            let unit = self.units[&rank.5];
            if unit.cost >= incoming_cost {
                continue;
            }
            new_load -= unit.cost;
            chosen.push(unit.key);
        }
        if (new_load as f64) <= self.l_max {
            Some(chosen)
        } else {
            None
        }
    }

    fn adjust(&mut self, cand: &CandidateKey, d: InstanceId) -> AdjustDecision {
        self.iterations += 1;
        if (self.est[d.0] + cand.cost) as f64 <= self.l_max {
            return AdjustDecision::Accept;
        }
        match self.find_exchange(cand.cost, d) {
            Some(e) => AdjustDecision::AcceptWithExchange(e),
            None => AdjustDecision::Reject,
        }
    }

    /// Least-load fit decreasing over the candidate pool.
    fn fit(&mut self) -> Result<(), BalanceError> {
        while let Some((&order, &cand)) = self.candidates.iter().next() {
            self.candidates.remove(&order);
            // Instances in ascending order of current estimated load.
            let mut by_load: Vec<usize> = (0..self.n).collect();
            by_load.sort_by_key(|&d| (self.est[d], d));
            let mut placed = false;
            for d in by_load {
                if self.iterations >= self.budget {
                    return Err(BalanceError::NonTermination);
                }
                match self.adjust(&cand, InstanceId(d)) {
                    AdjustDecision::Accept => {
                        self.place(cand.key, InstanceId(d));
                        placed = true;
                    }
                    AdjustDecision::AcceptWithExchange(victims) => {
                        for v in victims {
                            let out = self.disassociate(v, InstanceId(d));
                            self.push_candidate(out);
                        }
                        self.place(cand.key, InstanceId(d));
                        placed = true;
                    }
                    AdjustDecision::Reject => continue,
                }
                if placed {
                    break;
                }
            }
            // A candidate rejected everywhere would be retried against
            // unchanged state; fail fast instead of spinning.
            if !placed {
                return Err(BalanceError::NonTermination);
            }
        }
        Ok(())
    }

    fn table(&self, capacity: usize) -> RoutingTable {
        let mut table = RoutingTable::new(capacity);
        for (&k, &d) in &self.dest {
            table.set(k, d, self.n);
        }
        table
    }
}

/// Checks `L(d) + c(k) <= L_max` directly or via an exchangeable set.
///
/// `assigned` lists `(key, cost, windowed_mem)` for the keys currently on
/// `d`; `est_loads` are the current per-instance loads consistent with it.
pub fn adjust(
    cand: &CandidateKey,
    d: InstanceId,
    est_loads: &[u64],
    assigned: &[(KeyId, u64, u64)],
    mean_load: f64,
    theta_max: f64,
    psi: SelectionCriterion,
) -> AdjustDecision {
    let l_max = (1.0 + theta_max) * mean_load;
    if (est_loads[d.0] + cand.cost) as f64 <= l_max {
        return AdjustDecision::Accept;
    }
    let mut victims: Vec<Unit> = assigned
        .iter()
        .filter(|&&(_, cost, _)| cost < cand.cost)
        .map(|&(key, cost, mem)| Unit {
            key,
            cost,
            mem: mem.max(1),
            anchor: d,
            hashed: d,
        })
        .collect();
    victims.sort_by(|a, b| psi_cmp(psi, a, b));
    let mut chosen = Vec::new();
    let mut new_load = est_loads[d.0] + cand.cost;
    for v in victims {
        if (new_load as f64) <= l_max {
            break;
        }
        new_load -= v.cost;
        chosen.push(v.key);
    }
    if (new_load as f64) > l_max {
        AdjustDecision::Reject
    } else if chosen.is_empty() {
        AdjustDecision::Accept
    } else {
        AdjustDecision::AcceptWithExchange(chosen)
    }
}

/// Result of the public fitting subroutine.
#[derive(Clone, Debug, PartialEq)]
pub struct LlfdResult {
    pub table: RoutingTable,
    pub loads: Vec<u64>,
    pub iterations: u64,
}

/// Least-load fit decreasing: places every candidate, heaviest first, onto
/// the least-loaded instance that accepts it, exchanging cheaper keys off an
/// instance when direct placement would overload it. Exchanged keys re-enter
/// the pool. Candidate stats are taken from the snapshot; the returned table
/// is canonical.
#[allow(clippy::too_many_arguments)]
pub fn llfd(
    candidates: Vec<CandidateKey>,
    snap: &WorkloadSnapshot,
    window: usize,
    current_loads: &[u64],
    theta_max: f64,
    psi: SelectionCriterion,
    f_base: &AssignmentFunction,
) -> Result<LlfdResult, BalanceError> {
    let n = f_base.n_downstream;
    debug_assert_eq!(current_loads.len(), n);
    let cand_origin: BTreeMap<KeyId, InstanceId> =
        candidates.iter().map(|c| (c.key, c.origin)).collect();

    // Candidate anchors are where they were disassociated from; everything
    // else anchors at its base assignment.
    let universe: BTreeSet<KeyId> = snap
        .keys()
        .chain(f_base.table.iter().map(|(k, _)| k))
        .chain(candidates.iter().map(|c| c.key))
        .collect();
    let mut engine = Engine::new(
        snap,
        window,
        n,
        psi,
        universe
            .iter()
            .map(|&k| (k, cand_origin.get(&k).copied().unwrap_or(f_base.evaluate(k)))),
    );
    for &key in &universe {
        if !cand_origin.contains_key(&key) {
            engine.place(key, f_base.evaluate(key));
        }
    }
    debug_assert_eq!(engine.est.as_slice(), current_loads);

    let mean = snap.total_cost() as f64 / n as f64;
    engine.l_max = (1.0 + theta_max) * mean;
    for c in candidates {
        engine.push_candidate(c);
    }
    engine.fit()?;
    Ok(LlfdResult {
        table: engine.table(f_base.table.capacity),
        loads: engine.est.clone(),
        iterations: engine.iterations,
    })
}

fn placement_budget(key_count: usize) -> u64 {
    64 * (key_count.max(1) as u64)
}

/// Working state produced by one pass: final destinations, loads, placement
/// attempts, and the number of entries moved back.
struct PassState {
    dest: BTreeMap<KeyId, InstanceId>,
    est: Vec<u64>,
    iterations: u64,
    back_moves: usize,
}

/// One cleaning/selection/placement pass shared by every heuristic.
fn balance_pass(
    f: &AssignmentFunction,
    snap: &WorkloadSnapshot,
    window: usize,
    theta_max: f64,
    cleaning: Cleaning,
    psi: SelectionCriterion,
) -> Result<PassState, BalanceError> {
    let n = f.n_downstream;
    let universe: BTreeSet<KeyId> = snap
        .keys()
        .chain(f.table.iter().map(|(k, _)| k))
        .collect();

    let mut engine = Engine::new(
        snap,
        window,
        n,
        psi,
        universe.iter().map(|&k| (k, f.evaluate(k))),
    );
    for &key in &universe {
        engine.place(key, f.evaluate(key));
    }

    // Phase I: cleaning. Moving a key back reverts it to its hash home;
    // the move is virtual until the final table is derived.
    let back_moves = match cleaning {
        Cleaning::None => 0,
        Cleaning::All => {
            let entries: Vec<(KeyId, InstanceId)> = f.table.iter().collect();
            for &(k, d) in &entries {
                let unit = engine.unit(k);
                engine.disassociate(k, d);
                engine.place(k, unit.hashed);
            }
            entries.len()
        }
        Cleaning::BackMoves(count) => {
            let mut entries: Vec<Unit> = f.table.iter().map(|(k, _)| engine.unit(k)).collect();
            entries.sort_by(|a, b| psi_cmp(SelectionCriterion::SmallestMemory, a, b));
            let taken = count.min(entries.len());
            for unit in entries.into_iter().take(taken) {
                let d = engine.dest[&unit.key];
                engine.disassociate(unit.key, d);
                engine.place(unit.key, unit.hashed);
            }
            taken
        }
    };

    let mean = snap.total_cost() as f64 / n as f64;
    engine.l_max = (1.0 + theta_max) * mean;

    // Phase II: candidate selection from overloaded instances.
    engine.prepare_candidates();

    // Phase III: placement.
    engine.fit()?;

    Ok(PassState {
        dest: engine.dest,
        est: engine.est,
        iterations: engine.iterations,
        back_moves,
    })
}

fn assemble_outcome(
    f: &AssignmentFunction,
    snap: &WorkloadSnapshot,
    window: usize,
    capacity: usize,
    state: PassState,
) -> BalanceOutcome {
    let n = f.n_downstream;
    let mut table = RoutingTable::new(capacity);
    let mut delta = BTreeSet::new();
    for (&k, &d) in &state.dest {
        table.set(k, d, n);
        if f.evaluate(k) != d {
            delta.insert(k);
        }
    }
    // Keys without snapshot statistics carry no state and migrate for free.
    let cost = delta
        .iter()
        .filter_map(|k| snap.stats.get(k))
        .map(|s| s.windowed_memory(window))
        .sum();
    debug_assert_eq!(
        cost,
        migration_cost(
            &delta.iter().copied().filter(|k| snap.stats.contains_key(k)).collect(),
            snap,
            window
        )
        .unwrap()
    );
    BalanceOutcome {
        new_table: table,
        plan: MigrationPlan {
            delta,
            new_table: RoutingTable::new(capacity),
            cost,
        },
        achieved_theta: max_indicator(&state.est),
        achieved_overload: overload_ratio(&state.est),
        back_moves: state.back_moves,
        iterations: state.iterations,
        loads: state.est,
    }
    .with_plan_table()
}

impl BalanceOutcome {
    fn with_plan_table(mut self) -> Self {
        self.plan.new_table = self.new_table.clone();
        self
    }
}

/// Table-minimizing heuristic: empty the routing table, then rebalance with
/// the highest-cost-first criterion.
pub fn min_table(
    f: &AssignmentFunction,
    snap: &WorkloadSnapshot,
    window: usize,
    theta_max: f64,
) -> Result<BalanceOutcome, BalanceError> {
    let state = balance_pass(
        f,
        snap,
        window,
        theta_max,
        Cleaning::All,
        SelectionCriterion::HighestCost,
    )?;
    Ok(assemble_outcome(f, snap, window, f.table.capacity, state))
}

/// Migration-minimizing heuristic: no cleaning, selection by largest
/// migration priority.
pub fn min_mig(
    f: &AssignmentFunction,
    snap: &WorkloadSnapshot,
    window: usize,
    theta_max: f64,
    beta: f64,
) -> Result<BalanceOutcome, BalanceError> {
    let state = balance_pass(
        f,
        snap,
        window,
        theta_max,
        Cleaning::None,
        SelectionCriterion::LargestGamma { beta },
    )?;
    Ok(assemble_outcome(f, snap, window, f.table.capacity, state))
}

/// The capacity-bounded mixed algorithm.
///
/// Starts with no cleaning and repeatedly retries from the original table,
/// moving back a growing number of smallest-memory entries, until the result
/// table fits within `table_capacity`. The retry count grows by the current
/// capacity overshoot, so progress is monotone. If even moving back every
/// entry cannot satisfy the bound, the table-minimizing outcome is computed
/// and returned inside [`BalanceError::CapacityInfeasible`].
pub fn mixed(
    f: &AssignmentFunction,
    snap: &WorkloadSnapshot,
    window: usize,
    theta_max: f64,
    beta: f64,
    table_capacity: usize,
) -> Result<BalanceOutcome, BalanceError> {
    let table_len = f.table.len();
    let psi = SelectionCriterion::LargestGamma { beta };
    let mut n_back = 0usize;
    let mut total_iterations = 0u64;
    loop {
        let cleaning = if n_back == 0 {
            Cleaning::None
        } else {
            Cleaning::BackMoves(n_back)
        };
        let mut state = balance_pass(f, snap, window, theta_max, cleaning, psi)?;
        total_iterations += state.iterations;
        state.iterations = total_iterations;
        let outcome = assemble_outcome(f, snap, window, table_capacity, state);
        let size = outcome.new_table.len();
        if size <= table_capacity {
            return Ok(outcome);
        }
        if n_back >= table_len {
            let fallback = min_table(f, snap, window, theta_max)?;
            return Err(BalanceError::CapacityInfeasible(Box::new(fallback)));
        }
        n_back = (n_back + (size - table_capacity)).min(table_len);
    }
}

/// Brute-force variant: evaluates every cleaning level `n` in `[0, N_A]`,
/// keeps the feasible outcomes, and returns the one with minimum migration
/// cost (ties: smaller `n`, then smaller table).
pub fn mixed_bf(
    f: &AssignmentFunction,
    snap: &WorkloadSnapshot,
    window: usize,
    theta_max: f64,
    beta: f64,
    table_capacity: usize,
) -> Result<BalanceOutcome, BalanceError> {
    let psi = SelectionCriterion::LargestGamma { beta };
    let mut best: Option<(u64, usize, usize, BalanceOutcome)> = None;
    for n_back in 0..=f.table.len() {
        let cleaning = if n_back == 0 {
            Cleaning::None
        } else {
            Cleaning::BackMoves(n_back)
        };
        let state = balance_pass(f, snap, window, theta_max, cleaning, psi)?;
        let outcome = assemble_outcome(f, snap, window, table_capacity, state);
        if outcome.new_table.len() > table_capacity {
            continue;
        }
        let rank = (outcome.plan.cost, n_back, outcome.new_table.len());
        if best
            .as_ref()
            .map(|(c, n, t, _)| rank < (*c, *n, *t))
            .unwrap_or(true)
        {
            best = Some((rank.0, rank.1, rank.2, outcome));
        }
    }
    match best {
        Some((_, _, _, outcome)) => Ok(outcome),
        None => {
            let fallback = min_table(f, snap, window, theta_max)?;
            Err(BalanceError::CapacityInfeasible(Box::new(fallback)))
        }
    }
}

/// Greedy full assignment used as a quality baseline: every key is
/// disassociated, then assigned in descending cost order to the currently
/// least-loaded instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimpleOutcome {
    pub dest: BTreeMap<KeyId, InstanceId>,
    pub loads: Vec<u64>,
}

impl SimpleOutcome {
    pub fn overload_ratio(&self) -> f64 {
        overload_ratio(&self.loads)
    }
}

pub fn simple(snap: &WorkloadSnapshot, n_downstream: usize) -> SimpleOutcome {
    debug_assert!(n_downstream >= 1);
    let mut keys: Vec<(u64, KeyId)> = snap.stats.values().map(|s| (s.cost, s.key)).collect();
    keys.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut loads = alloc::vec![0u64; n_downstream];
    let mut dest = BTreeMap::new();
    for (cost, key) in keys {
        let d = (0..n_downstream)
            .min_by_key(|&d| (loads[d], d))
            .expect("at least one instance");
        loads[d] += cost;
        dest.insert(key, InstanceId(d));
    }
    SimpleOutcome { dest, loads }
}
