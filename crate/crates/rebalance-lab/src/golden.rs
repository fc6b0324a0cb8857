//! Worked-example checks runnable from the command line. Each check pins an
//! exact expected outcome; the subcommand prints one pass/fail line per
//! check and fails the process when any check fails.

use rebalance_core::balance::{self, gamma, llfd, mixed, CandidateKey, SelectionCriterion};
use rebalance_core::compact::{build_levels, discretize, naive_piecewise, Discretizer, PiecewiseBin};
use rebalance_core::fixtures::two_instance_example;
use rebalance_core::model::InstanceId;

pub struct GoldenCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> GoldenCheck {
    GoldenCheck {
        name,
        passed,
        detail,
    }
}

pub fn run_golden_checks() -> Vec<GoldenCheck> {
    let mut out = Vec::new();

    // Two-instance example, direct fit: perfect balance, four entries.
    {
        let ex = two_instance_example();
        let k7 = ex.keys[0];
        let result = llfd(
            vec![CandidateKey {
                key: k7,
                cost: 7,
                windowed_mem: 7,
                origin: InstanceId(0),
            }],
            &ex.snapshot,
            1,
            &[9, 4],
            0.0,
            SelectionCriterion::HighestCost,
            &ex.assignment,
        );
        match result {
            Ok(r) => out.push(check(
                "direct-fit-balances-at-four-entries",
                r.loads == vec![10, 10] && r.table.len() == 4,
                format!("loads {:?}, table {}", r.loads, r.table.len()),
            )),
            Err(e) => out.push(check(
                "direct-fit-balances-at-four-entries",
                false,
                format!("error: {e}"),
            )),
        }
    }

    // Cleaning first shrinks the result to two entries.
    {
        let ex = two_instance_example();
        match balance::min_table(&ex.assignment, &ex.snapshot, 1, 0.0) {
            Ok(r) => out.push(check(
                "cleaning-path-balances-at-two-entries",
                r.loads == vec![10, 10] && r.new_table.len() == 2,
                format!("loads {:?}, table {}", r.loads, r.new_table.len()),
            )),
            Err(e) => out.push(check(
                "cleaning-path-balances-at-two-entries",
                false,
                format!("error: {e}"),
            )),
        }
    }

    // The capacity-bounded algorithm satisfies both at capacity two.
    {
        let ex = two_instance_example();
        match mixed(&ex.assignment, &ex.snapshot, 1, 0.0, 1.0, 2) {
            Ok(r) => out.push(check(
                "capacity-two-balances-within-bound",
                r.loads == vec![10, 10] && r.new_table.len() <= 2,
                format!("loads {:?}, table {}", r.loads, r.new_table.len()),
            )),
            Err(e) => out.push(check(
                "capacity-two-balances-within-bound",
                false,
                format!("error: {e}"),
            )),
        }
    }

    // Level series for a maximum of 8 with gap 4.
    {
        let series = build_levels(8, 2);
        let passed = matches!(&series, Ok(s) if s.levels() == [8, 4, 2, 1]);
        out.push(check(
            "level-series-8-4-2-1",
            passed,
            format!("{:?}", series.map(|s| s.levels().to_vec())),
        ));
    }

    // Greedy discretization of the worked cost sequence cancels exactly.
    {
        let values = [8u64, 6, 3, 2, 2, 1, 1, 1, 1, 1];
        let mut disc = Discretizer::new(build_levels(8, 2).unwrap());
        match discretize(&values, &mut disc) {
            Ok(mapped) => {
                let total: i64 = values
                    .iter()
                    .zip(&mapped)
                    .map(|(&x, &y)| x as i64 - y as i64)
                    .sum();
                out.push(check(
                    "greedy-discretization-cancels-to-zero",
                    mapped[2] == 4 && total == 0 && disc.accumulated_deviation() == 0,
                    format!("third value -> {}, total deviation {}", mapped[2], total),
                ));
            }
            Err(e) => out.push(check(
                "greedy-discretization-cancels-to-zero",
                false,
                format!("error: {e}"),
            )),
        }
    }

    // Stateless piecewise bins leave a residual of three on the same data.
    {
        let values = [8u64, 6, 3, 2, 2, 1, 1, 1, 1, 1];
        let bins = [
            PiecewiseBin { lo: 1, hi: 3, representative: 2 },
            PiecewiseBin { lo: 4, hi: 6, representative: 5 },
            PiecewiseBin { lo: 7, hi: 9, representative: 8 },
        ];
        match naive_piecewise(&values, &bins) {
            Ok(mapped) => {
                let total: i64 = values
                    .iter()
                    .zip(&mapped)
                    .map(|(&x, &y)| x as i64 - y as i64)
                    .sum();
                out.push(check(
                    "piecewise-bins-leave-deviation-three",
                    total.abs() == 3,
                    format!("total deviation {total}"),
                ));
            }
            Err(e) => out.push(check(
                "piecewise-bins-leave-deviation-three",
                false,
                format!("error: {e}"),
            )),
        }
    }

    // Migration priority: equal weights tie, sublinear weighting prefers
    // the key with less state per unit of work.
    out.push(check(
        "priority-index-equal-weights-tie",
        gamma(7, 7, 1.0) == 1.0 && gamma(4, 4, 1.0) == 1.0,
        format!("{} and {}", gamma(7, 7, 1.0), gamma(4, 4, 1.0)),
    ));
    out.push(check(
        "priority-index-sublinear-prefers-light-state",
        gamma(7, 7, 0.5) < gamma(4, 4, 0.5),
        format!("{} < {}", gamma(7, 7, 0.5), gamma(4, 4, 0.5)),
    ));

    out
}
