use serde::{Deserialize, Serialize};

use crate::cost::Usage;
use crate::error::ProviderError;
use crate::extraction::{SelfScore, TaskSpec};
use crate::library::{Abstraction, Draft, Embedding, Kind, MergeDecision};
use crate::providers::Embedder;

/// A value together with the tokens spent producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Billed<T> {
    pub value: T,
    pub usage: Usage,
}

impl<T> Billed<T> {
    pub fn new(value: T, usage: Usage) -> Self {
        Billed { value, usage }
    }

    pub fn free(value: T) -> Self {
        Billed {
            value,
            usage: Usage::default(),
        }
    }
}

/// An extracted abstraction, embedded but not yet placed in the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub kind: Kind,
    pub content: String,
    pub embedding: Embedding,
}

/// Everything the engine needs from a model (or from a simulated stand-in).
///
/// Implementations must be callable from several trial workers at once.
/// Seeds are derived by the engine; deterministic backends must depend on
/// nothing else.
pub trait Backend: Sync {
    fn embedder(&self) -> &dyn Embedder;

    /// One-off per-task work done before the trials of an iteration, such as
    /// generating synthetic tests.
    fn prepare(&self, _task: &TaskSpec) -> Result<Billed<()>, ProviderError> {
        Ok(Billed::free(()))
    }

    fn solve(&self, task: &TaskSpec, context: &[&Abstraction], seed: u64) -> Result<Billed<String>, ProviderError>;

    /// `peers` holds the other successful trials of the same iteration.
    fn evaluate(
        &self,
        task: &TaskSpec,
        solution: &str,
        peers: &[&str],
        seed: u64,
    ) -> Result<Billed<SelfScore>, ProviderError>;

    /// Picks one of the tied top trials, identified by trial index.
    fn break_tie(&self, _task: &TaskSpec, _tied: &[(u32, &str)]) -> Result<Billed<Option<u32>>, ProviderError> {
        Ok(Billed::free(None))
    }

    fn extract(
        &self,
        task: &TaskSpec,
        solution: &str,
        score: &SelfScore,
        seed: u64,
    ) -> Result<Billed<Vec<Candidate>>, ProviderError>;

    fn merge(&self, existing: &Abstraction, candidate: &Draft) -> Result<Billed<MergeDecision>, ProviderError>;
}
