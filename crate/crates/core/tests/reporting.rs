use esc_core::config::preset;
use esc_core::report::{run_batch, run_scenario, Summary};

#[test]
fn uncompensated_delay_run_reports_diverged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = preset("fig5_nopredictor").unwrap();
    let outcome = run_scenario(&cfg, tmp.path()).unwrap();
    let summary = Summary::parse(&std::fs::read_to_string(tmp.path().join("summary.txt")).unwrap());
    assert_eq!(summary.get("status"), Some("diverged"));
    assert!(outcome.trajectory.diverged_at.is_some());
    for plot in ["theta.svg", "y.svg", "U.svg", "Hhat.svg"] {
        assert!(tmp.path().join(plot).exists(), "{plot}");
    }
}

#[test]
fn single_seed_batch_matches_direct_run() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = preset("short_delay").unwrap();
    cfg.sim.t_final = 20.0;
    cfg.dither.seed = 7;
    run_scenario(&cfg, &tmp.path().join("direct")).unwrap();
    let batch = run_batch(&cfg, &[7], &tmp.path().join("batch"), 0.25).unwrap();
    let read = |p: &str| std::fs::read(tmp.path().join(p)).unwrap();
    assert_eq!(
        read("direct/trajectory.csv"),
        read("batch/seed_7/trajectory.csv")
    );
    assert_eq!(batch.runs.len(), 1);
    let agg = Summary::parse(&String::from_utf8(read("batch/aggregate.txt")).unwrap());
    assert!(agg.get("seed_7_status").is_some());
    assert_eq!(agg.get("seeds"), Some("1"));
}

#[test]
fn duplicate_seeds_are_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = preset("short_delay").unwrap();
    assert!(run_batch(&cfg, &[3, 4, 3], tmp.path(), 0.25).is_err());
    assert!(!tmp.path().join("seed_3").exists());
}
