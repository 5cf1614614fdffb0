mod common;

use std::time::Duration;

use common::fault_recovery_run;

const LEASE_MS: u64 = 500;

pub fn crashed_worker_lease_is_recovered_ten_times() {
    for run in 0..10 {
        let r = fault_recovery_run(100 + run, LEASE_MS).unwrap_or_else(|e| panic!("run {run}: {e}"));
        assert_eq!(r.attempts, 2, "run {run}: {r:?}");
        assert!(r.result_matches, "run {run}: result differs from oracle");
        let bound = Duration::from_millis(2 * LEASE_MS) + r.oracle;
        eprintln!("run {run}: latency {:?}, bound {bound:?}", r.latency);
        assert!(r.latency <= bound, "run {run}: latency {:?} > bound {bound:?}", r.latency);
    }
}

/// Harness entry points for the checks shared with the acceptance runner.
mod checks {
    #[test]
    fn crashed_worker_lease_is_recovered_ten_times() {
        super::crashed_worker_lease_is_recovered_ten_times();
    }
}
