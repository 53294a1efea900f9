use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use evolib_core::cost::Usage;
use evolib_core::credit::TrialRecord;
use evolib_core::engine::{derive_seed, Backend, Billed, Candidate, Engine, RunConfig, TaskOrder};
use evolib_core::error::{EngineError, ProviderError};
use evolib_core::extraction::{EvaluationHook, ScoreMethod, SelfScore, TaskSpec};
use evolib_core::library::{Abstraction, Draft, Embedding, Kind, MergeDecision};
use evolib_core::persistence::{load_snapshot, read_log, verify, LogEvent, RunDir};
use evolib_core::providers::Embedder;

const DIM: usize = 8;

/// Every text embeds to the same unit vector, so sampling never filters.
struct Flat;

impl Embedder for Flat {
    fn dim(&self) -> usize {
        DIM
    }

    fn embed(&self, _: &str) -> Result<Embedding, ProviderError> {
        let mut v = vec![0.0; DIM];
        v[0] = 1.0;
        Ok(Embedding::from_unit(v).expect("unit vector"))
    }
}

/// A backend whose scores and failures are scripted per (iteration, trial).
struct Scripted {
    master: u64,
    seeds: HashMap<u64, (u64, u32)>,
    scores: BTreeMap<(u64, u32), f64>,
    failing_solves: BTreeSet<(u64, u32)>,
    failing_extracts: BTreeSet<u64>,
    extracted_from: Mutex<Vec<String>>,
    contexts: Mutex<Vec<(u64, Vec<u64>)>>,
}

impl Scripted {
    fn new(master: u64, iterations: u64, k: u32) -> Self {
        let mut seeds = HashMap::new();
        for t in 1..=iterations {
            for trial in 1..=k {
                seeds.insert(derive_seed(master, t, trial, "solve"), (t, trial));
            }
        }
        Scripted {
            master,
            seeds,
            scores: BTreeMap::new(),
            failing_solves: BTreeSet::new(),
            failing_extracts: BTreeSet::new(),
            extracted_from: Mutex::new(Vec::new()),
            contexts: Mutex::new(Vec::new()),
        }
    }

    fn score_of(&self, t: u64, trial: u32) -> f64 {
        self.scores
            .get(&(t, trial))
            .copied()
            .unwrap_or(((t * 7 + trial as u64 * 3) % 10) as f64 / 10.0)
    }
}

fn parse_solution(s: &str) -> (u64, u32) {
    let mut parts = s.trim_start_matches("sol-").split('-');
    (parts.next().unwrap().parse().unwrap(), parts.next().unwrap().parse().unwrap())
}

impl Backend for Scripted {
    fn embedder(&self) -> &dyn Embedder {
        &Flat
    }

    fn solve(&self, _task: &TaskSpec, context: &[&Abstraction], seed: u64) -> Result<Billed<String>, ProviderError> {
        let (t, trial) = self.seeds[&seed];
        assert_eq!(seed, derive_seed(self.master, t, trial, "solve"));
        self.contexts
            .lock()
            .unwrap()
            .push((t, context.iter().map(|a| a.id.0).collect()));
        if self.failing_solves.contains(&(t, trial)) {
            return Err(ProviderError::Transport("scripted failure".into()));
        }
        Ok(Billed::new(format!("sol-{t}-{trial}"), Usage::new(100, 50)))
    }

    fn evaluate(&self, _: &TaskSpec, solution: &str, _: &[&str], _: u64) -> Result<Billed<SelfScore>, ProviderError> {
        let (t, trial) = parse_solution(solution);
        let score = SelfScore::new(self.score_of(t, trial), ScoreMethod::MajorityVote, "");
        Ok(Billed::new(score, Usage::new(10, 1)))
    }

    fn extract(&self, _: &TaskSpec, solution: &str, _: &SelfScore, _: u64) -> Result<Billed<Vec<Candidate>>, ProviderError> {
        let (t, _) = parse_solution(solution);
        if self.failing_extracts.contains(&t) {
            return Err(ProviderError::Transport("extraction down".into()));
        }
        self.extracted_from.lock().unwrap().push(solution.to_owned());
        let embedding = Flat.embed("")?;
        Ok(Billed::new(
            vec![
                Candidate {
                    kind: Kind::Skill,
                    content: format!("skill from {solution}"),
                    embedding: embedding.clone(),
                },
                Candidate {
                    kind: Kind::Insight,
                    content: format!("insight from {solution}"),
                    embedding,
                },
            ],
            Usage::new(20, 5),
        ))
    }

    fn merge(&self, _: &Abstraction, _: &Draft) -> Result<Billed<MergeDecision>, ProviderError> {
        Ok(Billed::new(MergeDecision::Keep, Usage::new(3, 1)))
    }
}

fn tasks(n: usize) -> Vec<TaskSpec> {
    (0..n)
        .map(|i| TaskSpec {
            id: format!("t{i}").as_str().into(),
            description: format!("task {i}"),
            hook: EvaluationHook::Reasoning,
        })
        .collect()
}

fn config(iterations: u64, k: u32) -> RunConfig {
    RunConfig {
        iterations,
        trials_per_task: k,
        ..RunConfig::default()
    }
}

fn trial_records(log: &[evolib_core::persistence::LogLine]) -> Vec<TrialRecord> {
    log.iter()
        .filter_map(|l| match &l.event {
            LogEvent::Trial { record } => Some(record.clone()),
            _ => None,
        })
        .collect()
}

#[test]
fn zero_iterations_rejected() {
    let backend = Scripted::new(0, 1, 1);
    let err = Engine::new(config(0, 3), tasks(2), &backend).err().unwrap();
    assert!(err.to_string().contains("iterations"), "{err}");
}

#[test]
fn empty_pool_rejected() {
    let backend = Scripted::new(0, 1, 1);
    assert!(matches!(
        Engine::new(config(1, 3), Vec::new(), &backend),
        Err(EngineError::EmptyTaskPool)
    ));
}

#[test]
fn round_robin_visits_each_task_twice() {
    let n = 5;
    let backend = Scripted::new(0, 2 * n as u64, 2);
    let mut engine = Engine::new(config(2 * n as u64, 2), tasks(n), &backend).unwrap();
    let report = engine.run().unwrap();
    let mut visits: BTreeMap<String, usize> = BTreeMap::new();
    for s in &report.summaries {
        *visits.entry(s.task_id.to_string()).or_default() += 1;
    }
    assert_eq!(visits.len(), n);
    assert!(visits.values().all(|&v| v == 2));
}

#[test]
fn first_iteration_samples_nothing() {
    let backend = Scripted::new(0, 1, 3);
    let mut engine = Engine::new(config(1, 3), tasks(1), &backend).unwrap();
    engine.run().unwrap();
    let contexts = backend.contexts.lock().unwrap();
    assert_eq!(contexts.len(), 3);
    assert!(contexts.iter().all(|(_, ids)| ids.is_empty()));
    assert_eq!(engine.state().library.len(), 2);
}

#[test]
fn ties_go_to_the_lowest_trial_index() {
    let mut backend = Scripted::new(0, 1, 3);
    backend.scores.insert((1, 1), 0.4);
    backend.scores.insert((1, 2), 0.9);
    backend.scores.insert((1, 3), 0.9);
    let mut engine = Engine::new(config(1, 3), tasks(1), &backend).unwrap();
    let report = engine.run().unwrap();
    assert_eq!(report.summaries[0].best_trial, 2);
    assert_eq!(*backend.extracted_from.lock().unwrap(), vec!["sol-1-2".to_owned()]);
    let records = &engine.state().records;
    assert!(!records[1].extracted_ids.is_empty());
    assert!(records[0].extracted_ids.is_empty() && records[2].extracted_ids.is_empty());
}

#[test]
fn best_solution_only_replaced_by_a_strictly_better_score() {
    let mut backend = Scripted::new(0, 3, 1);
    backend.scores.insert((1, 1), 0.5);
    backend.scores.insert((2, 1), 0.5);
    backend.scores.insert((3, 1), 0.7);
    let mut engine = Engine::new(config(3, 1), tasks(1), &backend).unwrap();
    engine.run_iteration().unwrap();
    engine.run_iteration().unwrap();
    let best = &engine.state().best_solutions[&"t0".into()];
    assert_eq!((best.iteration, best.solution.as_str()), (1, "sol-1-1"));
    engine.run_iteration().unwrap();
    let best = &engine.state().best_solutions[&"t0".into()];
    assert_eq!((best.iteration, best.score.value), (3, 0.7));
}

#[test]
fn single_trial_future_ig_needs_a_differing_prior_record() {
    let backend = Scripted::new(0, 3, 1);
    let cfg = RunConfig {
        task_order: TaskOrder::FixedStream {
            stream: vec!["t0".into(), "t0".into(), "t1".into()],
        },
        ..config(3, 1)
    };
    let mut engine = Engine::new(cfg, tasks(2), &backend).unwrap();
    engine.run().unwrap();
    let records = &engine.state().records;
    assert!(records[0].sampled_ids.is_empty());
    assert!(!records[1].sampled_ids.is_empty());
    assert!(!records[2].sampled_ids.is_empty());

    let lib = &engine.state().library;
    for id in &records[1].sampled_ids {
        // measured once, at iteration 2 on t0; t1 had no record without it
        assert_eq!(lib.get(*id).unwrap().future_ig_history.len(), 1);
    }
    let only_t1: Vec<_> = records[2].sampled_ids.difference(&records[1].sampled_ids).collect();
    for id in only_t1 {
        assert!(lib.get(*id).unwrap().future_ig_history.is_empty());
    }
}

#[test]
fn failed_trial_scores_zero_and_the_loop_continues() {
    let mut backend = Scripted::new(0, 2, 3);
    backend.failing_solves.insert((1, 2));
    let mut engine = Engine::new(config(2, 3), tasks(1), &backend).unwrap();
    let report = engine.run().unwrap();
    let r = &engine.state().records[1];
    assert!(r.failed);
    assert_eq!(r.self_score, 0.0);
    assert_eq!(report.summaries[0].failed_trials, 1);
    assert_eq!(report.iterations, 2);
}

#[test]
fn extraction_failure_completes_without_new_entries() {
    let mut backend = Scripted::new(0, 2, 2);
    backend.failing_extracts.insert(2);
    let mut engine = Engine::new(config(2, 2), tasks(1), &backend).unwrap();
    let report = engine.run().unwrap();
    assert_eq!(report.summaries[0].library_size, 2);
    assert_eq!(report.summaries[1].library_size, 2);
    assert_eq!(report.summaries[1].candidates, 0);
}

#[test]
fn outage_checkpoints_and_resume_reproduces_the_log() {
    let (n, t, k) = (3, 8, 2);
    let reference = tempfile::tempdir().unwrap();
    {
        let backend = Scripted::new(0, t, k);
        let mut e = Engine::create(config(t, k), tasks(n), &backend, RunDir::new(reference.path())).unwrap();
        e.run().unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let run_dir = RunDir::new(dir.path());
    {
        let mut backend = Scripted::new(0, t, k);
        backend.failing_solves.extend([(5, 1), (5, 2)]);
        let mut e = Engine::create(config(t, k), tasks(n), &backend, run_dir.clone()).unwrap();
        match e.run() {
            Err(EngineError::ProviderOutage { iteration, .. }) => assert_eq!(iteration, 5),
            other => panic!("expected an outage, got {other:?}"),
        }
    }
    assert_eq!(load_snapshot(&run_dir.snapshot()).unwrap().run_state.iteration, 4);
    {
        let backend = Scripted::new(0, t, k);
        let mut e = Engine::resume(config(t, k), tasks(n), &backend, run_dir.clone()).unwrap();
        e.run().unwrap();
    }
    let a = std::fs::read(RunDir::new(reference.path()).log()).unwrap();
    let b = std::fs::read(run_dir.log()).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        std::fs::read(RunDir::new(reference.path()).snapshot()).unwrap(),
        std::fs::read(run_dir.snapshot()).unwrap()
    );
}

#[test]
fn resume_discards_log_lines_after_a_lagging_checkpoint() {
    let (t, k) = (6, 2);
    let cfg = RunConfig {
        snapshot_every: 2,
        ..config(t, k)
    };
    let reference = tempfile::tempdir().unwrap();
    {
        let backend = Scripted::new(0, t, k);
        Engine::create(cfg.clone(), tasks(2), &backend, RunDir::new(reference.path()))
            .unwrap()
            .run()
            .unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let run_dir = RunDir::new(dir.path());
    {
        let backend = Scripted::new(0, t, k);
        let mut e = Engine::create(cfg.clone(), tasks(2), &backend, run_dir.clone()).unwrap();
        for _ in 0..3 {
            e.run_iteration().unwrap();
        }
    }
    assert_eq!(load_snapshot(&run_dir.snapshot()).unwrap().run_state.iteration, 2);
    {
        let backend = Scripted::new(0, t, k);
        Engine::resume(cfg, tasks(2), &backend, run_dir.clone()).unwrap().run().unwrap();
    }
    assert_eq!(
        std::fs::read(RunDir::new(reference.path()).log()).unwrap(),
        std::fs::read(run_dir.log()).unwrap()
    );
}

#[test]
fn resume_refuses_a_different_task_pool() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = RunDir::new(dir.path());
    let backend = Scripted::new(0, 2, 1);
    Engine::create(config(2, 1), tasks(2), &backend, run_dir.clone()).unwrap().run().unwrap();
    assert!(Engine::resume(config(4, 1), tasks(3), &backend, run_dir).is_err());
}

#[test]
fn ledger_counts_trials_and_auxiliary_calls() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = RunDir::new(dir.path());
    let backend = Scripted::new(0, 4, 3);
    let mut e = Engine::create(config(4, 3), tasks(2), &backend, run_dir.clone()).unwrap();
    let report = e.run().unwrap();
    let log = read_log(&run_dir.log()).unwrap();
    let trials = trial_records(&log);
    let solve: u64 = trials.iter().map(|r| r.token_cost.weighted()).sum();
    let aux: u64 = log
        .iter()
        .filter_map(|l| match &l.event {
            LogEvent::AuxCall { usage, .. } => Some(usage.weighted()),
            _ => None,
        })
        .sum();
    assert_eq!(report.ledger.weighted_cost, solve + aux);
    // 12 solves at 300, 12 evaluations at 14, 4 extractions at 40
    assert_eq!(solve, 12 * 300);
    assert!(aux >= 12 * 14 + 4 * 40);
    assert!(verify(&log, Some(&load_snapshot(&run_dir.snapshot()).unwrap())).is_clean());
}
