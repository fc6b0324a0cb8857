//! Rebalancing engine for key-partitioned parallel stream operators.
//!
//! A logical operator splits its key space over `N_D` downstream task
//! instances through a mixed router: a deterministic hash covers the bulk of
//! the key domain, and a bounded routing table overrides the destinations of
//! a handful of keys. When the incoming distribution drifts and per-instance
//! loads diverge, the algorithms in [`balance`] rewrite the table so that
//! every instance lands within a configured tolerance of the mean load,
//! while keeping the volume of migrated key state — and optionally the table
//! size — small.
//!
//! The crate is organized around that pipeline:
//!
//! - [`model`] — keys, snapshots, the assignment function, and the load,
//!   balance, and migration metrics;
//! - [`balance`] — the placement subroutine and the table-minimizing,
//!   migration-minimizing, mixed, and brute-force rebalancers;
//! - [`compact`] — an aggregated record representation of per-key statistics
//!   with value discretization, and the mixed algorithm adapted to it;
//! - [`workload`] — a skewed synthetic workload generator with controlled
//!   inter-interval fluctuation;
//! - [`sim`] — a deterministic discrete-event simulation of the controller
//!   protocol that pauses, migrates, and resumes traffic around each
//!   rebalance.
//!
//! Everything is `no_std` (with `alloc`); all operations are pure functions
//! over immutable values, so they can be driven from any number of threads
//! without coordination. Wall-clock measurement is abstracted behind
//! [`sim::Clock`] and injected by the host.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod balance;
pub mod compact;
pub mod fixtures;
pub mod model;
pub mod rng;
pub mod sim;
pub mod workload;

pub use balance::{BalanceError, BalanceOutcome, SelectionCriterion};
pub use model::{
    AssignmentFunction, CoreError, InstanceId, KeyId, KeyIntervalStats, MigrationPlan,
    RoutingTable, TopologyConfig, WorkloadSnapshot,
};
