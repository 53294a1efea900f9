use evolib_core::engine::{Engine, RunConfig};
use evolib_core::extraction::Domain;
use evolib_core::persistence::{curve, inspect, load_snapshot, read_log, verify, LogEvent, RunDir};
use evolib_core::simworld::{SimBackend, WorldSpec};

fn simulated_run(dir: &std::path::Path, seed: u64, iterations: u64, consolidate: bool) -> RunDir {
    let world = WorldSpec::default_world();
    let backend = SimBackend::new(world.clone());
    let config = RunConfig {
        iterations,
        master_seed: seed,
        consolidate,
        ..RunConfig::for_domain(Domain::Simulated)
    };
    let run_dir = RunDir::new(dir);
    let mut engine = Engine::create(config, world.task_specs(), &backend, run_dir.clone()).unwrap();
    engine.run().unwrap();
    run_dir
}

#[test]
fn verify_is_clean_on_simulated_runs() {
    for (seed, consolidate) in [(0, true), (3, false)] {
        let tmp = tempfile::tempdir().unwrap();
        let dir = simulated_run(tmp.path(), seed, 60, consolidate);
        let log = read_log(&dir.log()).unwrap();
        let snap = load_snapshot(&dir.snapshot()).unwrap();
        let report = verify(&log, Some(&snap));
        assert!(report.is_clean(), "{:#?}", &report.discrepancies[..report.discrepancies.len().min(10)]);
        assert_eq!(report.iterations, 60);
        assert!(report.checks > 1000);
    }
}

#[test]
fn verify_flags_a_tampered_credit_value() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulated_run(tmp.path(), 1, 30, true);
    let mut log = read_log(&dir.log()).unwrap();
    let line = log
        .iter_mut()
        .find(|l| matches!(&l.event, LogEvent::Credit { report, .. } if !report.future_ig.is_empty()))
        .unwrap();
    if let LogEvent::Credit { report, .. } = &mut line.event {
        report.future_ig[0].value += 1e-6;
    }
    let report = verify(&log, None);
    assert!(report.discrepancies.iter().any(|d| d.contains("future IG")), "{:?}", report.discrepancies);
}

#[test]
fn verify_flags_a_tampered_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulated_run(tmp.path(), 2, 10, true);
    let mut log = read_log(&dir.log()).unwrap();
    let line = log.iter_mut().find(|l| matches!(l.event, LogEvent::Trial { .. })).unwrap();
    if let LogEvent::Trial { record } = &mut line.event {
        record.token_cost.output_tokens += 1;
    }
    let report = verify(&log, Some(&load_snapshot(&dir.snapshot()).unwrap()));
    assert!(report.discrepancies.iter().any(|d| d.contains("ledger")));
}

#[test]
fn curve_matches_summaries_and_cost_increases() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulated_run(tmp.path(), 4, 40, true);
    let points = curve(&read_log(&dir.log()).unwrap()).unwrap();
    let snap = load_snapshot(&dir.snapshot()).unwrap();
    assert_eq!(points.len(), 40);
    for w in points.windows(2) {
        assert!(w[1].weighted_cost > w[0].weighted_cost);
        assert!(w[1].mean_best_score >= w[0].mean_best_score);
    }
    for (p, s) in points.iter().zip(&snap.run_state.summaries) {
        assert_eq!(p.weighted_cost, s.ledger.weighted_cost);
        assert_eq!(p.mean_best_score, s.mean_best_score);
    }
}

#[test]
fn inspect_lists_top_entries_by_weight() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = simulated_run(tmp.path(), 5, 30, true);
    let snap = load_snapshot(&dir.snapshot()).unwrap();
    let top = inspect(&snap, 5).unwrap();
    assert_eq!(top.len(), 5.min(snap.entries.len()));
    for w in top.windows(2) {
        assert!(w[0].weight >= w[1].weight);
    }
}

#[test]
fn verify_reports_a_log_without_header() {
    let report = verify(&[], None);
    assert!(!report.is_clean());
}
