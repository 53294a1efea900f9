//! The abstraction library: weighted entries, similarity lookup, sampling and
//! consolidation bookkeeping.
//!
//! Entries are keyed by [`AbstractionId`] in a `BTreeMap`, so every scan visits
//! them in ascending id order. That ordering is what makes similarity ties and
//! seeded sampling reproducible.

mod consolidate;
mod embedding;
mod sample;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use self::consolidate::{ConsolidationOutcome, MergeDecider, MergeDecision, Placement};
pub use self::embedding::{Embedding, NORM_TOLERANCE};
pub use self::sample::{softmax, SampleRequest};
pub use crate::credit::WeightingConfig;
use crate::error::LibraryError;
pub use crate::ids::{AbstractionId, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Skill,
    Insight,
}

impl Kind {
    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Skill => "skill",
            Kind::Insight => "insight",
        }
    }
}

/// One absorbed candidate, kept on the surviving entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub absorbed: AbstractionId,
    pub iteration: u64,
    pub source_task: TaskId,
    pub parents: Vec<AbstractionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_task: TaskId,
    pub iteration: u64,
    /// Entries sampled into the context that produced this abstraction.
    pub parents: Vec<AbstractionId>,
    pub merged_from: Vec<MergeRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Abstraction {
    pub id: AbstractionId,
    pub kind: Kind,
    pub content: String,
    pub embedding: Embedding,
    /// Running maximum of per-task information gain.
    pub ig_score: f64,
    /// One entry per future-information-gain measurement.
    pub future_ig_history: Vec<f64>,
    pub provenance: Provenance,
    pub created_at: u64,
}

impl Abstraction {
    /// Mean of the future-IG history; 0 when empty.
    pub fn mean_future_ig(&self) -> f64 {
        if self.future_ig_history.is_empty() {
            0.0
        } else {
            self.future_ig_history.iter().sum::<f64>() / self.future_ig_history.len() as f64
        }
    }

    /// `tau(kind) * ig_score + mean(future_ig_history)`.
    pub fn weight(&self, config: &WeightingConfig) -> f64 {
        config.tau(self.kind) * self.ig_score + self.mean_future_ig()
    }
}

/// A freshly extracted abstraction that has not been placed in a library yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub kind: Kind,
    pub content: String,
    pub embedding: Embedding,
    pub source_task: TaskId,
    pub iteration: u64,
    pub parents: Vec<AbstractionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Library {
    entries: BTreeMap<AbstractionId, Abstraction>,
    embedding_dim: usize,
    config: WeightingConfig,
    next_id: u64,
}

impl Library {
    pub fn new(embedding_dim: usize, config: WeightingConfig) -> Self {
        Library {
            entries: BTreeMap::new(),
            embedding_dim,
            config,
            next_id: 0,
        }
    }

    /// Rebuilds a library from stored entries, re-checking every invariant.
    pub fn from_parts(
        embedding_dim: usize,
        config: WeightingConfig,
        entries: Vec<Abstraction>,
        next_id: u64,
    ) -> Result<Self, LibraryError> {
        let mut map = BTreeMap::new();
        for entry in entries {
            if entry.embedding.dim() != embedding_dim {
                return Err(LibraryError::DimensionMismatch {
                    expected: embedding_dim,
                    actual: entry.embedding.dim(),
                });
            }
            for &v in entry.future_ig_history.iter().chain([&entry.ig_score]) {
                if !v.is_finite() {
                    return Err(LibraryError::NonFinite { id: entry.id, value: v });
                }
            }
            let id = entry.id;
            if id.0 >= next_id || map.insert(id, entry).is_some() {
                return Err(LibraryError::DuplicateId(id));
            }
        }
        Ok(Library {
            entries: map,
            embedding_dim,
            config,
            next_id,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn config(&self) -> &WeightingConfig {
        &self.config
    }

    /// The id the next insertion or merge candidate will receive.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: AbstractionId) -> Option<&Abstraction> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: AbstractionId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Live entries in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Abstraction> {
        self.entries.values()
    }

    pub fn count(&self, kind: Kind) -> usize {
        self.iter().filter(|a| a.kind == kind).count()
    }

    fn allocate_id(&mut self) -> AbstractionId {
        let id = AbstractionId(self.next_id);
        self.next_id += 1;
        id
    }

    fn check_dim(&self, embedding: &Embedding) -> Result<(), LibraryError> {
        if embedding.dim() != self.embedding_dim {
            return Err(LibraryError::DimensionMismatch {
                expected: self.embedding_dim,
                actual: embedding.dim(),
            });
        }
        Ok(())
    }

    /// Inserts `draft` as a separate entry with zero IG and an empty history.
    pub fn add(&mut self, draft: Draft) -> Result<AbstractionId, LibraryError> {
        self.add_scored(draft, 0.0)
    }

    pub fn add_scored(&mut self, draft: Draft, ig_score: f64) -> Result<AbstractionId, LibraryError> {
        self.check_dim(&draft.embedding)?;
        let id = self.allocate_id();
        if !ig_score.is_finite() {
            return Err(LibraryError::NonFinite { id, value: ig_score });
        }
        self.insert_allocated(id, draft, ig_score);
        Ok(id)
    }

    fn insert_allocated(&mut self, id: AbstractionId, draft: Draft, ig_score: f64) {
        let entry = Abstraction {
            id,
            kind: draft.kind,
            content: draft.content,
            embedding: draft.embedding,
            ig_score,
            future_ig_history: Vec::new(),
            provenance: Provenance {
                source_task: draft.source_task,
                iteration: draft.iteration,
                parents: draft.parents,
                merged_from: Vec::new(),
            },
            created_at: draft.iteration,
        };
        self.entries.insert(id, entry);
    }

    /// Live entry of `kind` with the highest cosine similarity to `query`; ties
    /// go to the lowest id.
    pub fn find_most_similar(&self, query: &Embedding, kind: Kind) -> Option<(AbstractionId, f64)> {
        let mut best: Option<(AbstractionId, f64)> = None;
        for entry in self.iter().filter(|a| a.kind == kind) {
            let sim = query.cosine(&entry.embedding);
            match best {
                Some((_, b)) if sim <= b => {}
                _ => best = Some((entry.id, sim)),
            }
        }
        best
    }

    pub fn weight(&self, id: AbstractionId) -> Result<f64, LibraryError> {
        self.get(id)
            .map(|a| a.weight(&self.config))
            .ok_or(LibraryError::UnknownId(id))
    }

    /// Live entries sorted by descending weight, ties by ascending id.
    pub fn ranked(&self) -> Vec<(&Abstraction, f64)> {
        let mut ranked: Vec<_> = self.iter().map(|a| (a, a.weight(&self.config))).collect();
        ranked.sort_by(|(a, wa), (b, wb)| wb.total_cmp(wa).then(a.id.cmp(&b.id)));
        ranked
    }

    /// Raises the stored IG to `value` if it is larger. Returns the stored value.
    pub fn raise_ig(&mut self, id: AbstractionId, value: f64) -> Result<f64, LibraryError> {
        if !value.is_finite() {
            return Err(LibraryError::NonFinite { id, value });
        }
        let entry = self.entries.get_mut(&id).ok_or(LibraryError::UnknownId(id))?;
        if value > entry.ig_score {
            entry.ig_score = value;
        }
        Ok(entry.ig_score)
    }

    pub fn push_future_ig(&mut self, id: AbstractionId, value: f64) -> Result<usize, LibraryError> {
        if !value.is_finite() {
            return Err(LibraryError::NonFinite { id, value });
        }
        let entry = self.entries.get_mut(&id).ok_or(LibraryError::UnknownId(id))?;
        entry.future_ig_history.push(value);
        Ok(entry.future_ig_history.len())
    }

    pub(crate) fn entry_mut(&mut self, id: AbstractionId) -> Option<&mut Abstraction> {
        self.entries.get_mut(&id)
    }
}
