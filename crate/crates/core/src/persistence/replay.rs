//! Reading a run back from its log.
//!
//! [`verify`] rebuilds the library from the logged consolidation and credit
//! events, recomputes every estimator with [`RecordScan`] over the same-task
//! records seen so far, recomputes the cost ledger and best scores, and
//! reports every place where the log, its own summaries or the snapshot
//! disagree with the recomputation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::runlog::{LogEvent, LogLine, MergedEntry};
use super::snapshot::SnapshotDocument;
use crate::cost::CostLedger;
use crate::credit::{CreditEstimator, CreditReport, RecordScan, TrialRecord, WeightingConfig};
use crate::engine::{IterationSummary, RunConfig};
use crate::error::PersistenceError;
use crate::ids::{AbstractionId, TaskId};
use crate::library::{Abstraction, Draft, Kind, Library, MergeDecision};

/// Tolerance for recomputed estimator values.
pub const VERIFY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub iterations: u64,
    /// Number of individual values compared.
    pub checks: u64,
    pub discrepancies: Vec<String>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.discrepancies.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: u64,
    pub weighted_cost: u64,
    pub mean_best_score: f64,
}

/// What `inspect` prints for one entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryStats {
    pub id: AbstractionId,
    pub kind: Kind,
    pub weight: f64,
    pub ig_score: f64,
    pub mean_future_ig: f64,
    pub future_ig_count: usize,
    pub merged: usize,
    pub created_at: u64,
    pub content: String,
}

/// The `k` entries of highest weight, ties by ascending id.
pub fn inspect(snapshot: &SnapshotDocument, k: usize) -> Result<Vec<EntryStats>, PersistenceError> {
    let library = snapshot.library()?;
    Ok(library
        .ranked()
        .into_iter()
        .take(k)
        .map(|(a, weight)| EntryStats {
            id: a.id,
            kind: a.kind,
            weight,
            ig_score: a.ig_score,
            mean_future_ig: a.mean_future_ig(),
            future_ig_count: a.future_ig_history.len(),
            merged: a.provenance.merged_from.len(),
            created_at: a.created_at,
            content: a.content.clone(),
        })
        .collect())
}

fn run_header(log: &[LogLine]) -> Result<(&RunConfig, &[TaskId], usize), PersistenceError> {
    match log.first().map(|l| &l.event) {
        Some(LogEvent::RunStarted {
            config,
            tasks,
            embedding_dim,
        }) => Ok((config, tasks, *embedding_dim)),
        _ => Err(PersistenceError::CorruptLog {
            path: Default::default(),
            line: 1,
            message: "log does not start with run_started".into(),
        }),
    }
}

/// Groups consecutive lines by iteration, skipping the header.
fn iterations(log: &[LogLine]) -> impl Iterator<Item = (u64, &[LogLine])> {
    let body = &log[1.min(log.len())..];
    let mut rest = body;
    std::iter::from_fn(move || {
        let first = rest.first()?;
        let n = rest.iter().take_while(|l| l.iteration == first.iteration).count();
        let (group, tail) = rest.split_at(n);
        rest = tail;
        Some((first.iteration, group))
    })
}

/// Best non-failed score per task, updated from each iteration's trials.
#[derive(Default)]
struct BestScores(BTreeMap<TaskId, f64>);

impl BestScores {
    fn observe(&mut self, record: &TrialRecord) {
        if record.failed {
            return;
        }
        let best = self.0.entry(record.task_id.clone()).or_insert(f64::NEG_INFINITY);
        if record.self_score > *best {
            *best = record.self_score;
        }
    }

    fn mean(&self, tasks: &[TaskId]) -> f64 {
        let total: f64 = tasks.iter().filter_map(|t| self.0.get(t)).sum();
        total / tasks.len() as f64
    }
}

fn charge(ledger: &mut CostLedger, event: &LogEvent) {
    match event {
        LogEvent::Trial { record } => ledger.charge(record.token_cost),
        LogEvent::AuxCall { usage, .. } => ledger.charge(*usage),
        _ => {}
    }
}

/// Cumulative weighted cost against mean best score, one point per
/// iteration, recomputed from the trial and call events.
pub fn curve(log: &[LogLine]) -> Result<Vec<CurvePoint>, PersistenceError> {
    let (_, tasks, _) = run_header(log)?;
    let mut ledger = CostLedger::default();
    let mut best = BestScores::default();
    let mut points = Vec::new();
    for (iteration, group) in iterations(log) {
        let mut ended = false;
        for line in group {
            charge(&mut ledger, &line.event);
            match &line.event {
                LogEvent::Trial { record } => best.observe(record),
                LogEvent::IterationEnd { .. } => ended = true,
                _ => {}
            }
        }
        if ended {
            points.push(CurvePoint {
                iteration,
                weighted_cost: ledger.weighted_cost,
                mean_best_score: best.mean(tasks),
            });
        }
    }
    Ok(points)
}

struct Verifier<'a> {
    report: VerifyReport,
    config: &'a RunConfig,
    weighting: WeightingConfig,
    tasks: &'a [TaskId],
    library: Library,
    history: BTreeMap<TaskId, Vec<TrialRecord>>,
    records: Vec<TrialRecord>,
    ledger: CostLedger,
    best: BestScores,
}

impl Verifier<'_> {
    fn fail(&mut self, iteration: u64, message: impl std::fmt::Display) {
        self.report.discrepancies.push(format!("iteration {iteration}: {message}"));
    }

    fn check(&mut self, iteration: u64, ok: bool, message: impl FnOnce() -> String) {
        self.report.checks += 1;
        if !ok {
            let m = message();
            self.fail(iteration, m);
        }
    }

    fn close(&mut self, t: u64, what: &str, logged: f64, recomputed: f64) {
        let ok = (logged - recomputed).abs() <= VERIFY_TOLERANCE;
        self.check(t, ok, || format!("{what}: logged {logged}, recomputed {recomputed}"));
    }

    fn iteration(&mut self, t: u64, group: &[LogLine]) {
        for (i, line) in group.iter().enumerate() {
            if line.seq as usize != i {
                self.fail(t, format!("sequence number {} at position {i}", line.seq));
                return;
            }
        }
        let trials: Vec<&TrialRecord> = group
            .iter()
            .filter_map(|l| match &l.event {
                LogEvent::Trial { record } => Some(record),
                _ => None,
            })
            .collect();
        let Some(summary) = group.iter().find_map(|l| match &l.event {
            LogEvent::IterationEnd { summary } => Some(summary),
            _ => None,
        }) else {
            self.fail(t, "no iteration_end event");
            return;
        };
        if trials.is_empty() {
            self.fail(t, "no trial records");
            return;
        }
        let task = trials[0].task_id.clone();
        let k = self.config.trials_per_task as usize;
        self.check(t, trials.len() == k, || format!("{} trial records, expected {k}", trials.len()));
        for (i, r) in trials.iter().enumerate() {
            let ok = r.task_id == task && r.iteration == t && r.trial_index as usize == i + 1;
            self.check(t, ok, || format!("trial record {} is out of place", i + 1));
        }
        let history = self.history.entry(task.clone()).or_default();
        history.extend(trials.iter().map(|r| (*r).clone()));

        let Some(best) = trials.iter().find(|r| r.trial_index == summary.best_trial).copied() else {
            self.fail(t, format!("best trial {} has no record", summary.best_trial));
            return;
        };
        let top = trials
            .iter()
            .filter(|r| !r.failed)
            .map(|r| r.self_score)
            .fold(f64::NEG_INFINITY, f64::max);
        self.check(t, !best.failed && best.self_score == top, || {
            format!("best trial {} does not hold the top score {top}", best.trial_index)
        });

        let mu_base = {
            let h = &self.history[&task];
            h.iter().map(|r| r.self_score).sum::<f64>() / h.len() as f64
        };
        let provisional = self.weighting.log_ratio(best.self_score, mu_base);
        let threshold = if self.config.consolidate {
            self.config.consolidation_threshold
        } else {
            f64::INFINITY
        };

        let mut survivors = Vec::new();
        for line in group {
            match &line.event {
                LogEvent::Consolidation {
                    draft,
                    new_ig,
                    outcome,
                    merged,
                } => {
                    self.close(t, "provisional IG", *new_ig, provisional);
                    let parents: Vec<AbstractionId> = best.sampled_ids.iter().copied().collect();
                    let ok = draft.parents == parents && draft.iteration == t && draft.source_task == task;
                    self.check(t, ok, || format!("candidate {} provenance differs from the best trial", outcome.candidate));
                    let replayed = self.consolidate(draft, *new_ig, threshold, merged.as_ref());
                    match replayed {
                        Ok(r) => {
                            let ok = r.candidate == outcome.candidate
                                && r.placement == outcome.placement
                                && r.nearest == outcome.nearest;
                            self.check(t, ok, || {
                                format!("consolidation of {} replays as {r:?}, logged {outcome:?}", outcome.candidate)
                            });
                        }
                        Err(e) => self.fail(t, format!("consolidation of {} failed: {e}", outcome.candidate)),
                    }
                    let survivor = outcome.survivor();
                    if !survivors.contains(&survivor) {
                        survivors.push(survivor);
                    }
                }
                LogEvent::Credit { task_id, report } => {
                    self.check(t, *task_id == task, || format!("credit for task {task_id}"));
                    let sampled: BTreeSet<AbstractionId> =
                        trials.iter().flat_map(|r| r.sampled_ids.iter().copied()).collect();
                    self.credit(t, &task, &survivors, &sampled, report);
                }
                _ => {}
            }
        }
        let extracted: BTreeSet<AbstractionId> = survivors.iter().copied().collect();
        self.check(t, best.extracted_ids == extracted, || {
            "best trial's extracted ids differ from the consolidation survivors".into()
        });
        for r in trials.iter().filter(|r| r.trial_index != best.trial_index) {
            self.check(t, r.extracted_ids.is_empty(), || {
                format!("trial {} has extractions but was not the best", r.trial_index)
            });
        }

        for line in group {
            charge(&mut self.ledger, &line.event);
        }
        for r in &trials {
            self.best.observe(r);
        }
        self.records.extend(trials.into_iter().cloned());
        self.summary(t, &task, summary);
    }

    fn consolidate(
        &mut self,
        draft: &Draft,
        new_ig: f64,
        threshold: f64,
        merged: Option<&MergedEntry>,
    ) -> Result<crate::library::ConsolidationOutcome, crate::error::LibraryError> {
        let mut decider = |_: &Abstraction, _: &Draft| {
            Ok(match merged {
                Some(m) => MergeDecision::Merge {
                    content: m.content.clone(),
                    embedding: m.embedding.clone(),
                },
                None => MergeDecision::Keep,
            })
        };
        self.library.consolidate(draft.clone(), new_ig, threshold, &mut decider)
    }

    fn credit(
        &mut self,
        t: u64,
        task: &TaskId,
        extracted: &[AbstractionId],
        sampled: &BTreeSet<AbstractionId>,
        logged: &CreditReport,
    ) {
        let scan = RecordScan::new(&self.history[task][..]);
        let w = self.weighting.clone();
        let mut ig = Vec::new();
        let mut future = Vec::new();
        let mut skipped = BTreeSet::new();
        for &id in extracted {
            match scan.information_gain(id, &w) {
                Ok(v) => ig.push((id, v)),
                Err(_) => {
                    skipped.insert(id);
                }
            }
        }
        for &id in sampled {
            if !self.library.contains(id) {
                skipped.insert(id);
                continue;
            }
            match scan.future_information_gain(id, &w) {
                Ok(v) => future.push((id, v)),
                Err(_) => {
                    skipped.insert(id);
                }
            }
        }

        let logged_skips: BTreeSet<AbstractionId> = logged.skipped.iter().map(|s| s.id).collect();
        self.check(t, logged_skips == skipped, || {
            format!("skipped ids: logged {logged_skips:?}, recomputed {skipped:?}")
        });
        self.check(t, logged.ig.len() == ig.len(), || {
            format!("{} IG updates logged, {} recomputed", logged.ig.len(), ig.len())
        });
        self.check(t, logged.future_ig.len() == future.len(), || {
            format!("{} future IG updates logged, {} recomputed", logged.future_ig.len(), future.len())
        });

        for (id, raw) in ig {
            let Some(u) = logged.ig.iter().find(|u| u.id == id) else {
                self.fail(t, format!("IG for {id} missing from the log"));
                continue;
            };
            self.close(t, &format!("IG of {id}"), u.raw, raw);
            let Some(kind) = self.library.get(id).map(|a| a.kind) else {
                self.fail(t, format!("{id} is not live"));
                continue;
            };
            let contribution = if kind == Kind::Skill { raw } else { 0.0 };
            self.close(t, &format!("IG contribution of {id}"), u.contribution, contribution);
            let stored = if kind == Kind::Skill {
                self.library.raise_ig(id, u.raw).unwrap_or(f64::NAN)
            } else {
                self.library.get(id).map_or(f64::NAN, |a| a.ig_score)
            };
            self.check(t, stored.to_bits() == u.stored.to_bits(), || {
                format!("stored IG of {id}: logged {}, replayed {stored}", u.stored)
            });
        }
        for (id, value) in future {
            let Some(u) = logged.future_ig.iter().find(|u| u.id == id) else {
                self.fail(t, format!("future IG for {id} missing from the log"));
                continue;
            };
            self.close(t, &format!("future IG of {id}"), u.value, value);
            let len = self.library.push_future_ig(id, u.value).unwrap_or(0);
            self.check(t, len == u.history_len, || {
                format!("history length of {id}: logged {}, replayed {len}", u.history_len)
            });
        }
    }

    fn summary(&mut self, t: u64, task: &TaskId, s: &IterationSummary) {
        self.check(t, s.iteration == t && s.task_id == *task, || "summary names another iteration or task".into());
        let ledger = self.ledger;
        self.check(t, s.ledger == ledger, || {
            format!("ledger: logged {:?}, recomputed {ledger:?}", s.ledger)
        });
        let lib = &self.library;
        let counts = (lib.len(), lib.count(Kind::Skill), lib.count(Kind::Insight));
        let ranked = lib.ranked();
        let top = &ranked[..ranked.len().min(self.config.top_k_stats)];
        let n = top.len().max(1) as f64;
        let weight = top.iter().map(|(_, w)| w).sum::<f64>() / n;
        let ig = top.iter().map(|(a, _)| a.ig_score).sum::<f64>() / n;
        let fig = top.iter().map(|(a, _)| a.mean_future_ig()).sum::<f64>() / n;
        let mean_best = self.best.mean(self.tasks);
        self.check(t, (s.library_size, s.skills, s.insights) == counts, || {
            format!("library counts: logged {:?}, replayed {counts:?}", (s.library_size, s.skills, s.insights))
        });
        self.close(t, "top mean weight", s.top_mean_weight, weight);
        self.close(t, "top mean IG", s.top_mean_ig, ig);
        self.close(t, "top mean future IG", s.top_mean_future_ig, fig);
        self.close(t, "mean best score", s.mean_best_score, mean_best);
    }

    fn snapshot(&mut self, doc: &SnapshotDocument) {
        let t = doc.run_state.iteration;
        let entries: Vec<&Abstraction> = self.library.iter().collect();
        let same = entries.len() == doc.entries.len() && entries.iter().zip(&doc.entries).all(|(a, b)| *a == b);
        self.check(t, same, || "snapshot library differs from the replayed library".into());
        let next_id = self.library.next_id();
        self.check(t, doc.next_id == next_id, || {
            format!("snapshot next_id {}, replayed {next_id}", doc.next_id)
        });
        self.check(t, doc.run_state.ledger == self.ledger, || "snapshot ledger differs".into());
        self.check(t, doc.run_state.records == self.records, || "snapshot records differ".into());
        let best: BTreeMap<&TaskId, f64> = doc.run_state.best_solutions.iter().map(|(k, b)| (k, b.score.value)).collect();
        let replayed: BTreeMap<&TaskId, f64> = self.best.0.iter().map(|(k, v)| (k, *v)).collect();
        self.check(t, best == replayed, || "snapshot best scores differ".into());
    }
}

/// Replays `log` and, when given, compares the state at the snapshot's
/// iteration with `snapshot`.
pub fn verify(log: &[LogLine], snapshot: Option<&SnapshotDocument>) -> VerifyReport {
    let (config, tasks, dim) = match run_header(log) {
        Ok(h) => h,
        Err(e) => {
            return VerifyReport {
                discrepancies: vec![e.to_string()],
                ..Default::default()
            }
        }
    };
    let mut v = Verifier {
        report: VerifyReport::default(),
        config,
        weighting: config.weighting.clone(),
        tasks,
        library: Library::new(dim, config.weighting.clone()),
        history: BTreeMap::new(),
        records: Vec::new(),
        ledger: CostLedger::default(),
        best: BestScores::default(),
    };
    let snap_at = snapshot.map(|d| d.run_state.iteration);
    if snap_at == Some(0) {
        v.snapshot(snapshot.expect("present"));
    }
    let mut expected = 1;
    for (t, group) in iterations(log) {
        if t != expected {
            v.fail(t, format!("expected iteration {expected}"));
        }
        expected = t + 1;
        v.iteration(t, group);
        v.report.iterations = t;
        if snap_at == Some(t) {
            v.snapshot(snapshot.expect("present"));
        }
    }
    if let Some(s) = snap_at.filter(|s| *s > v.report.iterations) {
        v.fail(s, format!("snapshot is at iteration {s} but the log ends at {}", v.report.iterations));
    }
    v.report
}
