//! Deterministic example scenarios and construction helpers.
//!
//! Used by the verification tooling and the test suites to build small
//! workloads whose hash destinations are known in advance.

use alloc::vec::Vec;

use crate::model::{
    hash_key, AssignmentFunction, InstanceId, KeyId, KeyIntervalStats, RoutingTable,
    WorkloadSnapshot,
};

/// Finds distinct keys whose hash destinations match `targets`, scanning ids
/// from zero. Deterministic for a fixed hash function.
pub fn keys_hashing_to(n_downstream: usize, targets: &[usize]) -> Vec<KeyId> {
    let mut out = Vec::with_capacity(targets.len());
    let mut id = 0u64;
    for &t in targets {
        loop {
            let k = KeyId(id);
            id += 1;
            if hash_key(k, n_downstream).0 == t {
                out.push(k);
                break;
            }
        }
    }
    out
}

/// Snapshot where each key's frequency, cost, and single-interval memory all
/// equal the given cost value.
pub fn snapshot_from_costs(costs: &[(KeyId, u64)]) -> WorkloadSnapshot {
    let mut snap = WorkloadSnapshot::new(0);
    for &(k, c) in costs {
        snap.insert(KeyIntervalStats::new(k, c, c, c));
    }
    snap
}

/// The canonical two-instance rebalancing scenario.
///
/// Instance d0 carries keys with costs {7, 4, 5} (load 16) and d1 carries
/// {2, 1, 1} (load 4). Two routing entries are in force: the cost-2 key is
/// routed off its d0 hash home to d1, and the cost-5 key off its d1 home to
/// d0. Per-interval memory equals cost and the window is 1.
pub struct TwoInstanceExample {
    pub snapshot: WorkloadSnapshot,
    pub assignment: AssignmentFunction,
    /// Keys in cost order: [k_cost7, k_cost4, k_cost5, k_cost2, k_cost1a, k_cost1b].
    pub keys: Vec<KeyId>,
}

pub fn two_instance_example() -> TwoInstanceExample {
    // Hash homes: first three keys on d0, last three on d1.
    let keys = keys_hashing_to(2, &[0, 0, 0, 1, 1, 1]);
    let (k7, k4, k2) = (keys[0], keys[1], keys[2]);
    let (k1a, k5, k1b) = (keys[3], keys[4], keys[5]);

    let snapshot = snapshot_from_costs(&[
        (k7, 7),
        (k4, 4),
        (k5, 5),
        (k2, 2),
        (k1a, 1),
        (k1b, 1),
    ]);

    let mut table = RoutingTable::new(2);
    table.set(k2, InstanceId(1), 2); // cost-2 key: hash home d0, routed to d1
    table.set(k5, InstanceId(0), 2); // cost-5 key: hash home d1, routed to d0
    let assignment = AssignmentFunction::new(table, 2);

    TwoInstanceExample {
        snapshot,
        assignment,
        keys: alloc::vec![k7, k4, k5, k2, k1a, k1b],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::loads;

    #[test]
    fn example_matches_described_loads() {
        let ex = two_instance_example();
        let l = loads(&ex.assignment, &ex.snapshot);
        assert_eq!(l, alloc::vec![16, 4]);
        assert_eq!(ex.assignment.table.len(), 2);
    }

    #[test]
    fn keys_hash_where_requested() {
        let ks = keys_hashing_to(7, &[0, 3, 6, 3]);
        assert_eq!(hash_key(ks[0], 7).0, 0);
        assert_eq!(hash_key(ks[1], 7).0, 3);
        assert_eq!(hash_key(ks[2], 7).0, 6);
        assert_eq!(hash_key(ks[3], 7).0, 3);
        assert_ne!(ks[1], ks[3]);
    }
}
