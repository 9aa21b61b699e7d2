use churnstore::harness::metrics::{check_conservation, csv_string};
use churnstore::harness::scenarios::{
    generate_schedule, report_dir, rounds_needed, run_on_schedule, scenario_store_retrieve, summarize,
};
use churnstore::harness::HarnessError;
use churnstore::harness::{SimulationConfig, StorageMode};

fn small() -> SimulationConfig {
    let mut cfg = SimulationConfig { n: 64, d: 6, lambda_max: 0.9, rate_scale: 0.0, items: 3, payload_len: 700, ..Default::default() };
    cfg.set("tree_depth", "4").unwrap();
    cfg.horizon = rounds_needed(&cfg);
    cfg
}

#[test]
fn zero_churn_retrieves_everything() {
    let cfg = small();
    let s = generate_schedule(&cfg, cfg.adversary_seed).unwrap();
    let out = run_on_schedule(&cfg, &s, 0, true).unwrap().output;
    check_conservation(&out.rounds).unwrap();
    assert_eq!(out.retrievals.len(), cfg.items);
    assert!(out.retrievals.iter().all(|r| r.success()), "{:?}", out.retrievals);
    assert_eq!(out.count_events("stored"), cfg.items);
    assert_eq!(out.count_events("committee-dead"), 0);
    let rep = summarize(&cfg, &[&out]);
    assert_eq!(rep.good_fraction, 1.0);
}

#[test]
fn erasure_mode_retrieves_without_churn() {
    let mut cfg = small();
    cfg.mode = StorageMode::Erasure;
    cfg.h = 3;
    cfg.h_override = true;
    let s = generate_schedule(&cfg, cfg.adversary_seed).unwrap();
    let out = run_on_schedule(&cfg, &s, 0, true).unwrap().output;
    check_conservation(&out.rounds).unwrap();
    assert!(out.retrievals.iter().all(|r| r.success()), "{:?}", out.retrievals);
    assert_eq!(out.count_events("reconstruction-impossible"), 0);
}

#[test]
fn replay_is_identical_and_schedule_ignores_protocol_seed() {
    let cfg = SimulationConfig { rate_scale: 1.0, ..small() };
    let s = generate_schedule(&cfg, 5).unwrap();
    let a = run_on_schedule(&cfg, &s, 0, true).unwrap().output;
    let b = run_on_schedule(&cfg, &s, 0, true).unwrap().output;
    assert_eq!(csv_string(&a.rounds), csv_string(&b.rounds));
    assert_eq!(csv_string(&a.events), csv_string(&b.events));
    assert_eq!(csv_string(&a.retrievals), csv_string(&b.retrievals));

    let other = SimulationConfig { protocol_seed: 999, ..cfg.clone() };
    let s2 = generate_schedule(&other, 5).unwrap();
    assert_eq!(s2.digest(), s.digest());
    let c = run_on_schedule(&other, &s2, 0, true).unwrap().output;
    assert_eq!(c.schedule_digest, a.schedule_digest);
}

#[test]
fn churned_run_keeps_accounting() {
    let cfg = SimulationConfig { rate_scale: 2.0, ..small() };
    let s = generate_schedule(&cfg, 8).unwrap();
    let out = run_on_schedule(&cfg, &s, 0, true).unwrap().output;
    check_conservation(&out.rounds).unwrap();
    assert_eq!(out.retrievals.len(), cfg.items);
    assert!(out.rounds.iter().map(|m| m.messages_dropped).sum::<u64>() > 0);
}

#[test]
fn tiny_budget_is_enforced() {
    let mut cfg = small();
    cfg.budget_words = 50;
    let s = generate_schedule(&cfg, cfg.adversary_seed).unwrap();
    match run_on_schedule(&cfg, &s, 0, true) {
        Err(HarnessError::BudgetExceeded { words, cap, .. }) => assert!(words > cap && cap == 50),
        other => panic!("expected BudgetExceeded, got {:?}", other.map(|_| ())),
    }
    cfg.enforce_budget = false;
    assert!(run_on_schedule(&cfg, &s, 0, true).is_ok());
}

#[test]
fn short_horizon_is_rejected() {
    let cfg = SimulationConfig { horizon: 20, ..small() };
    let s = generate_schedule(&cfg, 1).unwrap();
    assert!(matches!(run_on_schedule(&cfg, &s, 0, true), Err(HarnessError::Config(_))));
}

#[test]
fn written_runs_can_be_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimulationConfig { trials: 2, out: dir.path().to_path_buf(), ..small() };
    let (rep, runs) = scenario_store_retrieve(&cfg, true, true).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(rep.retrievals, 2 * cfg.items);
    for f in ["manifest.txt", "summary.csv", "trial-0/rounds.csv", "trial-1/retrievals.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let text = report_dir(dir.path()).unwrap();
    assert!(!text.is_empty());
}
