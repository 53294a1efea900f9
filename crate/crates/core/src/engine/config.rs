use serde::{Deserialize, Serialize};

use crate::credit::WeightingConfig;
use crate::extraction::Domain;
use crate::ids::TaskId;
use crate::library::{Embedding, SampleRequest};

/// Which task each iteration works on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TaskOrder {
    /// Task `(t - 1) mod N` at iteration `t`.
    RoundRobin,
    /// A task drawn uniformly from the pool, keyed by `(seed, t)`.
    Random { seed: u64 },
    /// Each listed task once, in order. An empty list means the pool order.
    /// Ids may repeat to revisit a task later in the stream.
    FixedStream {
        #[serde(default)]
        stream: Vec<TaskId>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub similarity_threshold: f64,
    pub max_skills: usize,
    pub max_insights: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            similarity_threshold: 0.0,
            max_skills: 10,
            max_insights: 10,
        }
    }
}

impl SamplingConfig {
    pub fn request(&self, task_embedding: Embedding, seed: u64) -> SampleRequest {
        SampleRequest {
            task_embedding,
            similarity_threshold: self.similarity_threshold,
            max_skills: self.max_skills,
            max_insights: self.max_insights,
            rng_seed: Some(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u64,
    pub trials_per_task: u32,
    pub task_order: TaskOrder,
    pub sampling: SamplingConfig,
    pub consolidation_threshold: f64,
    /// When false every extraction is inserted as a new entry.
    pub consolidate: bool,
    pub weighting: WeightingConfig,
    pub master_seed: u64,
    /// Checkpoint after every this many iterations (and after the last one).
    pub snapshot_every: u64,
    /// How many top-weighted entries the per-iteration statistics cover.
    pub top_k_stats: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: 100,
            trials_per_task: 3,
            task_order: TaskOrder::RoundRobin,
            sampling: SamplingConfig::default(),
            consolidation_threshold: 0.8,
            consolidate: true,
            weighting: WeightingConfig::default(),
            master_seed: 0,
            snapshot_every: 1,
            top_k_stats: 100,
        }
    }
}

/// A rejected configuration value, named by its dotted key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub key: String,
    pub message: String,
}

impl FieldError {
    fn new(key: &str, message: impl Into<String>) -> Self {
        FieldError {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "`{}`: {}", self.key, self.message)
    }
}

impl RunConfig {
    /// Defaults with the trial count used for tasks of `domain`.
    pub fn for_domain(domain: Domain) -> Self {
        let trials_per_task = match domain {
            Domain::Code => 3,
            Domain::Reasoning => 10,
            Domain::Agentic => 1,
            Domain::Simulated => 4,
        };
        RunConfig {
            trials_per_task,
            ..RunConfig::default()
        }
    }

    /// Checks every field that does not depend on the task pool.
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.iterations == 0 {
            return Err(FieldError::new("iterations", "must be at least 1"));
        }
        if self.trials_per_task == 0 {
            return Err(FieldError::new("trials_per_task", "must be at least 1"));
        }
        if !(-1.0..=1.0).contains(&self.sampling.similarity_threshold) {
            return Err(FieldError::new("sampling.similarity_threshold", "must lie in [-1, 1]"));
        }
        if !(self.consolidation_threshold > -1.0 && self.consolidation_threshold <= 1.0) {
            return Err(FieldError::new("consolidation_threshold", "must lie in (-1, 1]"));
        }
        if self.snapshot_every == 0 {
            return Err(FieldError::new("snapshot_every", "must be at least 1"));
        }
        self.weighting
            .validate()
            .map_err(|m| FieldError::new("weighting", m))?;
        Ok(())
    }

    /// Checks the task order against a concrete pool.
    pub fn validate_pool(&self, pool: &[TaskId]) -> Result<(), FieldError> {
        if let TaskOrder::FixedStream { stream } = &self.task_order {
            if let Some(unknown) = stream.iter().find(|id| !pool.contains(id)) {
                return Err(FieldError::new("task_order.stream", format!("unknown task `{unknown}`")));
            }
            let len = if stream.is_empty() { pool.len() } else { stream.len() };
            if self.iterations > len as u64 {
                return Err(FieldError::new(
                    "iterations",
                    format!("a fixed stream of {len} tasks allows at most {len} iterations"),
                ));
            }
        }
        Ok(())
    }
}
