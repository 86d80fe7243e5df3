mod support;

use geps_core::catalog::CrashPoint;

#[test]
fn random_crash_points_keep_acknowledged_state() {
    let mut landed = 0;
    let mut snapshot_crashes = 0;
    let mut transitions = 0;
    for seed in 0..40u64 {
        let dir = tempfile::tempdir().unwrap();
        let r = support::crash::run_trial(seed, dir.path()).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        landed += r.interrupted_landed as usize;
        transitions += r.transitions_checked;
        if r.crashed && !matches!(r.crash, CrashPoint::Append { .. }) {
            snapshot_crashes += 1;
        }
    }
    // the workload has to actually hit the interesting cases
    assert!(snapshot_crashes > 0);
    assert!(landed > 0);
    assert!(transitions > 0);
}

#[test]
fn legal_edges() {
    use support::crash::legal;
    assert!(legal("NEW", "STAGING"));
    assert!(legal("RUNNING", "ERROR"));
    assert!(!legal("FINISHED", "RUNNING"));
    assert!(!legal("ERROR", "ERROR"));
    assert!(!legal("NEW", "RUNNING"));
}
