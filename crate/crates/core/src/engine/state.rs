use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cost::CostLedger;
use crate::credit::TrialRecord;
use crate::extraction::SelfScore;
use crate::ids::TaskId;
use crate::library::Library;

/// The best attempt at a task so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSolution {
    pub solution: String,
    pub score: SelfScore,
    pub iteration: u64,
    pub trial_index: u32,
}

/// Per-iteration numbers for plotting and for the acceptance checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: u64,
    pub task_id: TaskId,
    pub best_trial: u32,
    pub mean_trial_score: f64,
    pub failed_trials: u32,
    pub candidates: usize,
    pub inserted: usize,
    pub merged: usize,
    pub library_size: usize,
    pub skills: usize,
    pub insights: usize,
    /// Means over the `top_k_stats` entries of highest weight.
    pub top_mean_weight: f64,
    pub top_mean_ig: f64,
    pub top_mean_future_ig: f64,
    /// Mean best score over the whole pool; unattempted tasks count as 0.
    pub mean_best_score: f64,
    pub ledger: CostLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    /// Iterations completed so far.
    pub iteration: u64,
    pub library: Library,
    pub best_solutions: BTreeMap<TaskId, BestSolution>,
    pub records: Vec<TrialRecord>,
    pub ledger: CostLedger,
    pub summaries: Vec<IterationSummary>,
}

impl RunState {
    pub fn new(library: Library) -> Self {
        RunState {
            iteration: 0,
            library,
            best_solutions: BTreeMap::new(),
            records: Vec::new(),
            ledger: CostLedger::default(),
            summaries: Vec::new(),
        }
    }
}

/// What [`super::Engine::run`] hands back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub iterations: u64,
    pub summaries: Vec<IterationSummary>,
    pub ledger: CostLedger,
    pub library_size: usize,
}
