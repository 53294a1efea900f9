//! The iterative solve, score, extract, consolidate and credit loop.
//!
//! Each iteration picks one task and runs `K` trials against the library as it
//! stood when the iteration began. Trials are solved and scored in parallel.
//! The best trial (lowest index among equals) is mined for new abstractions,
//! which are consolidated one at a time, and then credit flows to this
//! iteration's extractions (IG) and to everything sampled (future IG).
//!
//! With an output directory, every iteration is appended to the run log and
//! the state is checkpointed so an interrupted run can be resumed.

mod backend;
mod config;
mod state;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;

pub use self::backend::{Backend, Billed, Candidate};
pub use self::config::{FieldError, RunConfig, SamplingConfig, TaskOrder};
pub use self::state::{BestSolution, IterationSummary, RunReport, RunState};
use crate::credit::{update_credit, TaskStats, TrialRecord};
use crate::error::{ConfigError, EngineError, PersistenceError, ProviderError};
use crate::extraction::{Domain, SelfScore, TaskSpec};
use crate::ids::{AbstractionId, TaskId};
use crate::library::{Abstraction, Draft, Embedding, Library, MergeDecision, Placement};
use crate::persistence::{
    load_snapshot, read_log, save_snapshot, truncate_log, CallPurpose, LogEvent, MergedEntry, RunDir, RunLogWriter,
    SnapshotDocument,
};
use crate::providers::hash_seed;

/// Seed for one random decision, keyed by what it is for.
pub fn derive_seed(master: u64, iteration: u64, trial: u32, purpose: &str) -> u64 {
    hash_seed(&[
        &master.to_le_bytes(),
        &iteration.to_le_bytes(),
        &trial.to_le_bytes(),
        purpose.as_bytes(),
    ])
}

struct Output {
    dir: RunDir,
    log: RunLogWriter,
}

pub struct Engine<'a> {
    config: RunConfig,
    tasks: Vec<TaskSpec>,
    backend: &'a dyn Backend,
    state: RunState,
    stats: BTreeMap<TaskId, TaskStats>,
    task_embeddings: HashMap<usize, Embedding>,
    output: Option<Output>,
}

/// One attempt, before extraction.
struct Trial {
    index: u32,
    sampled: Vec<AbstractionId>,
    solution: String,
    score: Option<SelfScore>,
    record: TrialRecord,
}

impl<'a> Engine<'a> {
    /// A fresh run with an empty library. Nothing is written to disk.
    pub fn new(config: RunConfig, tasks: Vec<TaskSpec>, backend: &'a dyn Backend) -> Result<Self, EngineError> {
        let library = Library::new(backend.embedder().dim(), config.weighting.clone());
        Self::with_state(config, tasks, backend, RunState::new(library))
    }

    fn with_state(
        config: RunConfig,
        tasks: Vec<TaskSpec>,
        backend: &'a dyn Backend,
        state: RunState,
    ) -> Result<Self, EngineError> {
        if tasks.is_empty() {
            return Err(EngineError::EmptyTaskPool);
        }
        config.validate().map_err(invalid)?;
        let ids: Vec<TaskId> = tasks.iter().map(|t| t.id.clone()).collect();
        config.validate_pool(&ids).map_err(invalid)?;
        let mut seen = BTreeSet::new();
        for t in &tasks {
            t.validate().map_err(|m| EngineError::Config(ConfigError::Validation(m)))?;
            if !seen.insert(&t.id) {
                return Err(EngineError::Config(ConfigError::Validation(format!("duplicate task id `{}`", t.id))));
            }
        }
        let mut stats: BTreeMap<TaskId, TaskStats> = BTreeMap::new();
        for record in &state.records {
            stats.entry(record.task_id.clone()).or_default().observe(record);
        }
        Ok(Engine {
            config,
            tasks,
            backend,
            state,
            stats,
            task_embeddings: HashMap::new(),
            output: None,
        })
    }

    /// Starts a fresh run that logs to and checkpoints into `dir`.
    pub fn create(
        config: RunConfig,
        tasks: Vec<TaskSpec>,
        backend: &'a dyn Backend,
        dir: RunDir,
    ) -> Result<Self, EngineError> {
        let mut engine = Self::new(config, tasks, backend)?;
        dir.create()?;
        let mut log = RunLogWriter::create(&dir.log())?;
        log.write_iteration(
            0,
            &[LogEvent::RunStarted {
                config: engine.config.clone(),
                tasks: engine.tasks.iter().map(|t| t.id.clone()).collect(),
                embedding_dim: engine.state.library.embedding_dim(),
            }],
        )?;
        engine.output = Some(Output { dir, log });
        engine.checkpoint()?;
        Ok(engine)
    }

    /// Continues the run checkpointed in `dir`. `config.iterations` may differ
    /// from the original run's, everything else should match.
    pub fn resume(
        config: RunConfig,
        tasks: Vec<TaskSpec>,
        backend: &'a dyn Backend,
        dir: RunDir,
    ) -> Result<Self, EngineError> {
        let doc = load_snapshot(&dir.snapshot())?;
        doc.check_dim(backend.embedder().dim())?;
        let log_tasks = match read_log(&dir.log())?.into_iter().next().map(|l| l.event) {
            Some(LogEvent::RunStarted { tasks, .. }) => tasks,
            _ => {
                return Err(PersistenceError::Corrupt {
                    path: dir.log(),
                    message: "log does not start with run_started".into(),
                }
                .into())
            }
        };
        let ids: Vec<TaskId> = tasks.iter().map(|t| t.id.clone()).collect();
        if ids != log_tasks {
            return Err(EngineError::Config(ConfigError::Validation(
                "task pool differs from the checkpointed run".into(),
            )));
        }
        let dropped = truncate_log(&dir.log(), doc.run_state.iteration)?;
        if dropped > 0 {
            log::info!("discarded {dropped} log line(s) written after the checkpoint");
        }
        let state = doc.into_state()?;
        let mut engine = Self::with_state(config, tasks, backend, state)?;
        engine.output = Some(Output {
            log: RunLogWriter::append(&dir.log())?,
            dir,
        });
        Ok(engine)
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn into_state(self) -> RunState {
        self.state
    }

    /// Runs until `config.iterations` iterations have completed.
    pub fn run(&mut self) -> Result<RunReport, EngineError> {
        while self.state.iteration < self.config.iterations {
            self.run_iteration()?;
        }
        Ok(self.report())
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            iterations: self.state.iteration,
            summaries: self.state.summaries.clone(),
            ledger: self.state.ledger,
            library_size: self.state.library.len(),
        }
    }

    /// Index of the task worked on at iteration `t` (1-based).
    pub fn task_at(&self, t: u64) -> usize {
        let n = self.tasks.len() as u64;
        match &self.config.task_order {
            TaskOrder::RoundRobin => ((t - 1) % n) as usize,
            TaskOrder::Random { seed } => (hash_seed(&[b"task", &seed.to_le_bytes(), &t.to_le_bytes()]) % n) as usize,
            TaskOrder::FixedStream { stream } if stream.is_empty() => (t - 1) as usize,
            TaskOrder::FixedStream { stream } => {
                let id = &stream[(t - 1) as usize];
                self.tasks.iter().position(|task| &task.id == id).expect("validated stream")
            }
        }
    }

    fn task_embedding(&mut self, index: usize) -> Result<Embedding, EngineError> {
        if let Some(e) = self.task_embeddings.get(&index) {
            return Ok(e.clone());
        }
        let e = self
            .backend
            .embedder()
            .embed(&self.tasks[index].description)
            .map_err(EngineError::Embedding)?;
        self.task_embeddings.insert(index, e.clone());
        Ok(e)
    }

    /// Executes one iteration of the loop and returns its summary.
    pub fn run_iteration(&mut self) -> Result<IterationSummary, EngineError> {
        let t = self.state.iteration + 1;
        let task_index = self.task_at(t);
        let task_embedding = self.task_embedding(task_index)?;
        let task = &self.tasks[task_index];
        let backend = self.backend;
        let master = self.config.master_seed;
        let k_trials = self.config.trials_per_task;
        let mut events = Vec::new();

        match backend.prepare(task) {
            Ok(b) => push_aux(&mut events, CallPurpose::Prepare, None, b.usage),
            Err(e) => events.push(failure("prepare", None, &e)),
        }

        let library = &self.state.library;
        let samples: Vec<Vec<AbstractionId>> = (1..=k_trials)
            .map(|k| {
                let req = self
                    .config
                    .sampling
                    .request(task_embedding.clone(), derive_seed(master, t, k, "sample"));
                library.sample(&req)
            })
            .collect();

        let solved: Vec<Result<Billed<String>, ProviderError>> = (1..=k_trials)
            .into_par_iter()
            .map(|k| {
                let context: Vec<&Abstraction> = samples[k as usize - 1]
                    .iter()
                    .map(|id| library.get(*id).expect("sampled from this library"))
                    .collect();
                backend.solve(task, &context, derive_seed(master, t, k, "solve"))
            })
            .collect();
        let solutions: Vec<&str> = solved
            .iter()
            .map(|r| r.as_ref().map(|b| b.value.as_str()).unwrap_or(""))
            .collect();
        let scored: Vec<Option<Result<Billed<SelfScore>, ProviderError>>> = (1..=k_trials)
            .into_par_iter()
            .map(|k| {
                let i = k as usize - 1;
                solved[i].as_ref().ok()?;
                let peers: Vec<&str> = (0..solutions.len()).filter(|j| *j != i).map(|j| solutions[j]).collect();
                Some(backend.evaluate(task, solutions[i], &peers, derive_seed(master, t, k, "evaluate")))
            })
            .collect();

        let mut last_error = None;
        let mut trials = Vec::with_capacity(k_trials as usize);
        for (i, (solve, score)) in solved.into_iter().zip(scored).enumerate() {
            let index = i as u32 + 1;
            let sampled = samples[i].clone();
            let (solution, solve_usage, score) = match (solve, score) {
                (Ok(s), Some(Ok(score))) => {
                    push_aux(&mut events, CallPurpose::Evaluate, Some(index), score.usage);
                    (s.value, s.usage, Some(score.value))
                }
                (Ok(s), Some(Err(e))) => {
                    events.push(failure("evaluate", Some(index), &e));
                    last_error = Some(e);
                    (s.value, s.usage, None)
                }
                (Err(e), _) => {
                    events.push(failure("solve", Some(index), &e));
                    last_error = Some(e);
                    (String::new(), Default::default(), None)
                }
                (Ok(_), None) => unreachable!("scored whenever solved"),
            };
            let record = TrialRecord {
                task_id: task.id.clone(),
                iteration: t,
                trial_index: index,
                sampled_ids: sampled.iter().copied().collect(),
                solution: solution.clone(),
                self_score: score.as_ref().map_or(0.0, |s| s.value),
                extracted_ids: BTreeSet::new(),
                token_cost: solve_usage,
                failed: score.is_none(),
            };
            trials.push(Trial {
                index,
                sampled,
                solution,
                score,
                record,
            });
        }

        if trials.iter().all(|tr| tr.score.is_none()) {
            self.checkpoint()?;
            return Err(EngineError::ProviderOutage {
                iteration: t,
                last: last_error.expect("a failed trial left an error"),
            });
        }

        // best trial: highest score, lowest index among equals
        let top = trials
            .iter()
            .filter_map(|tr| tr.score.as_ref().map(|s| s.value))
            .fold(f64::NEG_INFINITY, f64::max);
        let tied: Vec<&Trial> = trials
            .iter()
            .filter(|tr| tr.score.as_ref().is_some_and(|s| s.value == top))
            .collect();
        let mut best = tied[0].index;
        if tied.len() > 1 && task.domain() == Domain::Reasoning {
            let options: Vec<(u32, &str)> = tied.iter().map(|tr| (tr.index, tr.solution.as_str())).collect();
            match backend.break_tie(task, &options) {
                Ok(b) => {
                    push_aux(&mut events, CallPurpose::TieBreak, None, b.usage);
                    if let Some(pick) = b.value.filter(|p| options.iter().any(|o| o.0 == *p)) {
                        best = pick;
                    }
                }
                Err(e) => events.push(failure("tie_break", None, &e)),
            }
        }
        let best_i = best as usize - 1;
        let best_score = trials[best_i].score.clone().expect("best trial succeeded");

        let improved = self
            .state
            .best_solutions
            .get(&task.id)
            .is_none_or(|b| best_score.value > b.score.value);
        if improved {
            self.state.best_solutions.insert(
                task.id.clone(),
                BestSolution {
                    solution: trials[best_i].solution.clone(),
                    score: best_score.clone(),
                    iteration: t,
                    trial_index: best,
                },
            );
        }

        let stats = self.stats.entry(task.id.clone()).or_default();
        for tr in &trials {
            stats.observe_trial(&tr.record);
        }

        let candidates = match backend.extract(
            task,
            &trials[best_i].solution,
            &best_score,
            derive_seed(master, t, best, "extract"),
        ) {
            Ok(b) => {
                push_aux(&mut events, CallPurpose::Extract, Some(best), b.usage);
                b.value
            }
            Err(e) => {
                events.push(failure("extract", Some(best), &e));
                Vec::new()
            }
        };

        let weighting = self.state.library.config().clone();
        let mu_base = stats.mu_base().expect("trials observed");
        let provisional_ig = weighting.log_ratio(best_score.value, mu_base);
        let threshold = if self.config.consolidate {
            self.config.consolidation_threshold
        } else {
            f64::INFINITY
        };
        let parents: Vec<AbstractionId> = trials[best_i].record.sampled_ids.iter().copied().collect();
        let (n_candidates, mut inserted, mut merged) = (candidates.len(), 0, 0);
        let mut survivors = Vec::new();
        for c in candidates {
            let draft = Draft {
                kind: c.kind,
                content: c.content,
                embedding: c.embedding,
                source_task: task.id.clone(),
                iteration: t,
                parents: parents.clone(),
            };
            let mut merge_usage = Vec::new();
            let mut decider = |existing: &Abstraction, candidate: &Draft| {
                let b = backend.merge(existing, candidate)?;
                merge_usage.push(b.usage);
                Ok::<MergeDecision, ProviderError>(b.value)
            };
            let outcome = self
                .state
                .library
                .consolidate(draft.clone(), provisional_ig, threshold, &mut decider)?;
            for usage in merge_usage {
                push_aux(&mut events, CallPurpose::Merge, Some(best), usage);
            }
            let merged_entry = match outcome.placement {
                Placement::Merged { into } => {
                    merged += 1;
                    let e = self.state.library.get(into).expect("merge target is live");
                    Some(MergedEntry {
                        content: e.content.clone(),
                        embedding: e.embedding.clone(),
                    })
                }
                Placement::Inserted => {
                    inserted += 1;
                    None
                }
            };
            let survivor = outcome.survivor();
            events.push(LogEvent::Consolidation {
                draft,
                new_ig: provisional_ig,
                outcome,
                merged: merged_entry,
            });
            if trials[best_i].record.extracted_ids.insert(survivor) {
                stats.observe_extraction(survivor, best_score.value);
                survivors.push(survivor);
            }
        }

        let sampled_union: BTreeSet<AbstractionId> = trials.iter().flat_map(|tr| tr.sampled.iter().copied()).collect();
        let report = update_credit(&mut self.state.library, &*stats, &survivors, &sampled_union)?;

        let records: Vec<TrialRecord> = trials.into_iter().map(|tr| tr.record).collect();
        for r in &records {
            events.push(LogEvent::Trial { record: r.clone() });
        }
        events.push(LogEvent::Credit {
            task_id: task.id.clone(),
            report,
        });

        for event in &events {
            match event {
                LogEvent::Trial { record } => self.state.ledger.charge(record.token_cost),
                LogEvent::AuxCall { usage, .. } => self.state.ledger.charge(*usage),
                _ => {}
            }
        }
        let failed_trials = records.iter().filter(|r| r.failed).count() as u32;
        let mean_trial_score = records.iter().map(|r| r.self_score).sum::<f64>() / records.len() as f64;
        let task_id = task.id.clone();
        self.state.records.extend(records);
        self.state.iteration = t;

        let summary = self.summarize(t, task_id, best, mean_trial_score, failed_trials, n_candidates, inserted, merged);
        events.push(LogEvent::IterationEnd {
            summary: summary.clone(),
        });
        self.state.summaries.push(summary.clone());

        if let Some(out) = &mut self.output {
            out.log.write_iteration(t, &events)?;
        }
        if t % self.config.snapshot_every == 0 || t == self.config.iterations {
            self.checkpoint()?;
        }
        Ok(summary)
    }

    #[allow(clippy::too_many_arguments)]
    fn summarize(
        &self,
        iteration: u64,
        task_id: TaskId,
        best: u32,
        mean_trial_score: f64,
        failed_trials: u32,
        candidates: usize,
        inserted: usize,
        merged: usize,
    ) -> IterationSummary {
        let lib = &self.state.library;
        let ranked = lib.ranked();
        let top = &ranked[..ranked.len().min(self.config.top_k_stats)];
        let mean = |f: &dyn Fn(&(&Abstraction, f64)) -> f64| {
            if top.is_empty() {
                0.0
            } else {
                top.iter().map(f).sum::<f64>() / top.len() as f64
            }
        };
        let best_total: f64 = self
            .tasks
            .iter()
            .filter_map(|task| self.state.best_solutions.get(&task.id))
            .map(|b| b.score.value)
            .sum();
        IterationSummary {
            iteration,
            task_id,
            best_trial: best,
            mean_trial_score,
            failed_trials,
            candidates,
            inserted,
            merged,
            library_size: lib.len(),
            skills: lib.count(crate::library::Kind::Skill),
            insights: lib.count(crate::library::Kind::Insight),
            top_mean_weight: mean(&|(_, w)| *w),
            top_mean_ig: mean(&|(a, _)| a.ig_score),
            top_mean_future_ig: mean(&|(a, _)| a.mean_future_ig()),
            mean_best_score: best_total / self.tasks.len() as f64,
            ledger: self.state.ledger,
        }
    }

    /// Writes the current state to the run directory, if there is one.
    pub fn checkpoint(&self) -> Result<(), EngineError> {
        if let Some(out) = &self.output {
            save_snapshot(&out.dir.snapshot(), &SnapshotDocument::from_state(&self.state))?;
        }
        Ok(())
    }
}

fn invalid(e: FieldError) -> EngineError {
    EngineError::Config(ConfigError::Validation(e.to_string()))
}

fn push_aux(events: &mut Vec<LogEvent>, purpose: CallPurpose, trial_index: Option<u32>, usage: crate::cost::Usage) {
    events.push(LogEvent::AuxCall {
        purpose,
        trial_index,
        usage,
    });
}

fn failure(stage: &str, trial_index: Option<u32>, e: &ProviderError) -> LogEvent {
    log::warn!("{stage} failed (trial {trial_index:?}): {e}");
    LogEvent::ProviderFailure {
        stage: stage.into(),
        trial_index,
        message: e.to_string(),
    }
}
