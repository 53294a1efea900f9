use std::path::Path;
use std::process::{Command, Output};

use evolib_core::simworld::{WorldParams, WorldSpec};

fn evolib(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evolib"))
        .args(args)
        .env_remove("EVOLIB_API_KEY")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = evolib(args);
    assert!(
        out.status.success(),
        "evolib {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = evolib(args);
    assert!(!out.status.success(), "evolib {args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_twice_gives_identical_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&["simulate", "--world", "default", "--seed", "1", "--iterations", "200", "--out-dir", s(dir)]);
    }
    let la = std::fs::read(a.join("run.jsonl")).unwrap();
    assert!(!la.is_empty());
    assert_eq!(la, std::fs::read(b.join("run.jsonl")).unwrap());

    let out = ok(&["verify", s(&a)]);
    assert!(out.contains("verified 200 iterations"), "{out}");
    assert!(out.trim_end().ends_with(" 0 discrepancies"), "{out}");
}

#[test]
fn curve_and_inspect_read_a_finished_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    ok(&["simulate", "--seed", "2", "--iterations", "30", "--out-dir", s(&dir)]);

    let csv = ok(&["curve", s(&dir)]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("weighted_cost,mean_best_score"));
    let costs: Vec<u64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(costs.len(), 30);
    assert!(costs.windows(2).all(|w| w[1] > w[0]));

    let json = ok(&["curve", s(&dir), "--format", "json"]);
    assert!(json.trim_start().starts_with('['));

    let table = ok(&["inspect", s(&dir), "-k", "5"]);
    assert!(table.contains("rank"));
    assert_eq!(table.lines().count(), 2 + 5);
    let rows = ok(&["inspect", s(&dir.join("snapshot.json")), "-k", "3", "--json"]);
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn resume_continues_to_the_same_log() {
    let tmp = tempfile::tempdir().unwrap();
    let (whole, split) = (tmp.path().join("whole"), tmp.path().join("split"));
    ok(&["simulate", "--seed", "3", "--iterations", "40", "--out-dir", s(&whole)]);
    ok(&["simulate", "--seed", "3", "--iterations", "15", "--out-dir", s(&split)]);
    ok(&["resume", "--out-dir", s(&split), "--iterations", "40"]);
    // the header keeps the original iteration count, so compare from the first iteration on
    let body = |p: &Path| {
        let text = std::fs::read_to_string(p.join("run.jsonl")).unwrap();
        text.lines().skip(1).map(str::to_owned).collect::<Vec<_>>()
    };
    assert_eq!(body(&whole), body(&split));
    assert!(ok(&["verify", s(&split)]).contains(" 0 discrepancies"));
}

#[test]
fn run_resume_from_flag_matches_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    ok(&["simulate", "--seed", "4", "--iterations", "5", "--out-dir", s(&dir)]);
    let out = ok(&["run", "--resume-from", s(&dir), "--iterations", "8"]);
    assert!(out.contains("completed 8 iterations"), "{out}");
}

#[test]
fn existing_run_directory_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    ok(&["simulate", "--iterations", "2", "--out-dir", s(&dir)]);
    assert!(err(&["simulate", "--iterations", "2", "--out-dir", s(&dir)]).contains("already holds a run"));
}

#[test]
fn invalid_config_reports_file_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "mode = \"simulate\"\n[run]\ntrials_per_task = 0\n").unwrap();
    let e = err(&["run", "--config", s(&cfg), "--out-dir", s(&tmp.path().join("o"))]);
    assert!(e.contains("bad.toml:3"), "{e}");
    assert!(e.contains("run.trials_per_task"), "{e}");

    std::fs::write(&cfg, "[run]\niterations = 3\nsnapshot_evry = 1\n").unwrap();
    let e = err(&["run", "--config", s(&cfg), "--out-dir", s(&tmp.path().join("o"))]);
    assert!(e.contains("bad.toml:3"), "{e}");
}

#[test]
fn zero_iterations_flag_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let e = err(&["simulate", "--iterations", "0", "--out-dir", s(&tmp.path().join("o"))]);
    assert!(e.contains("iterations"), "{e}");
}

#[test]
fn config_file_drives_a_simulated_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "out_dir = \"out\"\n[run]\niterations = 6\ntrials_per_task = 2\n").unwrap();
    let out = ok(&["run", "--config", s(&cfg)]);
    assert!(out.contains("completed 6 iterations"), "{out}");
    assert!(tmp.path().join("out/snapshot.json").exists());
}

#[test]
fn real_mode_without_credentials_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("tasks.jsonl"),
        "{\"id\":\"a\",\"description\":\"What is 2+2?\",\"hook\":{\"type\":\"reasoning\"}}\n",
    )
    .unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(
        &cfg,
        "mode = \"real\"\ntasks = \"tasks.jsonl\"\nout_dir = \"out\"\n\n[chat]\nbase_url = \"http://127.0.0.1:9\"\nmodel = \"m\"\n\n[embeddings]\nbase_url = \"http://127.0.0.1:9\"\nmodel = \"e\"\n",
    )
    .unwrap();
    assert!(err(&["run", "--config", s(&cfg)]).contains("EVOLIB_API_KEY"));

    std::fs::write(&cfg, "mode = \"real\"\ntasks = \"tasks.jsonl\"\nout_dir = \"out\"\n").unwrap();
    assert!(err(&["run", "--config", s(&cfg)]).contains("[chat]"));
}

#[test]
fn resume_refuses_a_world_of_another_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let mk = |dim: usize, name: &str| {
        let world = WorldSpec::generate(&WorldParams {
            embedding_dim: dim,
            ..WorldParams::default()
        });
        let path = tmp.path().join(name);
        std::fs::write(&path, world.to_toml()).unwrap();
        path
    };
    let (w256, w128) = (mk(256, "w256.toml"), mk(128, "w128.toml"));
    let dir = tmp.path().join("r");
    ok(&["simulate", "--world", s(&w256), "--iterations", "3", "--out-dir", s(&dir)]);
    let e = err(&["resume", "--mode", "simulate", "--world", s(&w128), "--out-dir", s(&dir), "--iterations", "5"]);
    assert!(e.contains("dimension"), "{e}");
}

#[test]
fn verify_reports_a_tampered_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    ok(&["simulate", "--seed", "5", "--iterations", "10", "--out-dir", s(&dir)]);
    let log = dir.join("run.jsonl");
    let text = std::fs::read_to_string(&log).unwrap();
    let tampered = text.replacen("\"output_tokens\":", "\"output_tokens\":1", 1);
    assert_ne!(text, tampered);
    std::fs::write(&log, tampered).unwrap();
    let out = evolib(&["verify", s(&dir)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ledger"));
}
