use serde::{Deserialize, Serialize};

use super::{Abstraction, AbstractionId, Draft, Embedding, Library, MergeRecord};
use crate::error::{LibraryError, ProviderError};

#[derive(Debug, Clone, PartialEq)]
pub enum MergeDecision {
    /// Replace the existing entry's content with `content` (already embedded).
    Merge { content: String, embedding: Embedding },
    Keep,
}

/// Decides whether a candidate folds into its nearest same-kind entry, and
/// writes the consolidated text when it does.
pub trait MergeDecider {
    fn decide(&mut self, existing: &Abstraction, candidate: &Draft) -> Result<MergeDecision, ProviderError>;
}

impl<F> MergeDecider for F
where
    F: FnMut(&Abstraction, &Draft) -> Result<MergeDecision, ProviderError>,
{
    fn decide(&mut self, existing: &Abstraction, candidate: &Draft) -> Result<MergeDecision, ProviderError> {
        self(existing, candidate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "placement", rename_all = "snake_case")]
pub enum Placement {
    Merged { into: AbstractionId },
    Inserted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationOutcome {
    /// Id allocated to the candidate. Equals the live entry's id when inserted.
    pub candidate: AbstractionId,
    #[serde(flatten)]
    pub placement: Placement,
    pub nearest: Option<(AbstractionId, f64)>,
    pub decider_error: Option<String>,
}

impl ConsolidationOutcome {
    /// The live entry now holding the candidate.
    pub fn survivor(&self) -> AbstractionId {
        match self.placement {
            Placement::Merged { into } => into,
            Placement::Inserted => self.candidate,
        }
    }
}

impl Library {
    /// Folds `draft` into its most similar same-kind entry when the similarity
    /// reaches `threshold` and the decider approves; inserts it otherwise.
    ///
    /// A merge keeps the existing id, takes the decider's content and embedding,
    /// sets `ig_score` to the max of both and appends the candidate's (empty)
    /// history. Decider failures fall back to insertion.
    pub fn consolidate(
        &mut self,
        draft: Draft,
        new_ig: f64,
        threshold: f64,
        decider: &mut dyn MergeDecider,
    ) -> Result<ConsolidationOutcome, LibraryError> {
        self.check_dim(&draft.embedding)?;
        let candidate = self.allocate_id();
        if !new_ig.is_finite() {
            return Err(LibraryError::NonFinite {
                id: candidate,
                value: new_ig,
            });
        }
        let nearest = self.find_most_similar(&draft.embedding, draft.kind);
        let mut decider_error = None;

        if let Some((into, sim)) = nearest.filter(|&(_, sim)| sim >= threshold) {
            let existing = self.get(into).expect("nearest entry is live");
            match decider.decide(existing, &draft) {
                Ok(MergeDecision::Merge { content, embedding }) if embedding.dim() == self.embedding_dim => {
                    let entry = self.entry_mut(into).expect("nearest entry is live");
                    entry.content = content;
                    entry.embedding = embedding;
                    entry.ig_score = entry.ig_score.max(new_ig);
                    entry.provenance.merged_from.push(MergeRecord {
                        absorbed: candidate,
                        iteration: draft.iteration,
                        source_task: draft.source_task,
                        parents: draft.parents,
                    });
                    return Ok(ConsolidationOutcome {
                        candidate,
                        placement: Placement::Merged { into },
                        nearest: Some((into, sim)),
                        decider_error: None,
                    });
                }
                Ok(MergeDecision::Merge { embedding, .. }) => {
                    decider_error = Some(format!(
                        "merged embedding has dimension {}, expected {}",
                        embedding.dim(),
                        self.embedding_dim
                    ));
                }
                Ok(MergeDecision::Keep) => {}
                Err(e) => {
                    log::warn!("merge decider failed for candidate {candidate}: {e}; inserting");
                    decider_error = Some(e.to_string());
                }
            }
        }

        self.insert_allocated(candidate, draft, new_ig);
        Ok(ConsolidationOutcome {
            candidate,
            placement: Placement::Inserted,
            nearest,
            decider_error,
        })
    }

    /// Merges two live entries of the same kind directly: `absorbed` disappears
    /// and `into` takes `content`, the larger IG and both histories.
    pub fn merge_entries(
        &mut self,
        into: AbstractionId,
        absorbed: AbstractionId,
        content: String,
        embedding: Embedding,
    ) -> Result<(), LibraryError> {
        self.check_dim(&embedding)?;
        let gone = self.get(absorbed).ok_or(LibraryError::UnknownId(absorbed))?;
        let target = self.get(into).ok_or(LibraryError::UnknownId(into))?;
        if gone.kind != target.kind || into == absorbed {
            return Err(LibraryError::KindChanged(absorbed));
        }
        let gone = self.entries.remove(&absorbed).expect("checked above");
        let entry = self.entry_mut(into).expect("checked above");
        entry.content = content;
        entry.embedding = embedding;
        entry.ig_score = entry.ig_score.max(gone.ig_score);
        entry.future_ig_history.extend(gone.future_ig_history);
        entry.provenance.merged_from.push(MergeRecord {
            absorbed,
            iteration: gone.created_at,
            source_task: gone.provenance.source_task,
            parents: gone.provenance.parents,
        });
        entry.provenance.merged_from.extend(gone.provenance.merged_from);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::Kind;
    use super::*;
    use crate::credit::WeightingConfig;

    fn approve(existing: &Abstraction, candidate: &Draft) -> Result<MergeDecision, ProviderError> {
        Ok(MergeDecision::Merge {
            content: format!("{} + {}", existing.content, candidate.content),
            embedding: existing.embedding.clone(),
        })
    }

    fn refuse(_: &Abstraction, _: &Draft) -> Result<MergeDecision, ProviderError> {
        Ok(MergeDecision::Keep)
    }

    #[test]
    fn empty_library_inserts() {
        let mut l = Library::new(4, WeightingConfig::default());
        let out = l
            .consolidate(draft(Kind::Skill, "s", unit(4, 0)), 0.2, 0.8, &mut approve)
            .unwrap();
        assert_eq!(out.placement, Placement::Inserted);
        assert_eq!(l.get(out.survivor()).unwrap().ig_score, 0.2);
    }

    #[test]
    fn below_threshold_inserts_without_asking() {
        let mut l = Library::new(4, WeightingConfig::default());
        l.add(draft(Kind::Skill, "old", unit(4, 0))).unwrap();
        let mut asked = false;
        let mut decider = |_: &Abstraction, _: &Draft| {
            asked = true;
            Ok(MergeDecision::Keep)
        };
        let out = l
            .consolidate(draft(Kind::Skill, "new", at_cosine(4, 0.75)), 0.0, 0.8, &mut decider)
            .unwrap();
        assert_eq!(out.placement, Placement::Inserted);
        assert!(!asked);
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn refusal_inserts_with_empty_history() {
        let mut l = Library::new(4, WeightingConfig::default());
        let old = l.add(draft(Kind::Skill, "old", unit(4, 0))).unwrap();
        l.push_future_ig(old, 0.4).unwrap();
        let out = l
            .consolidate(draft(Kind::Skill, "new", at_cosine(4, 0.95)), 0.3, 0.8, &mut refuse)
            .unwrap();
        assert_eq!(out.placement, Placement::Inserted);
        let new = l.get(out.survivor()).unwrap();
        assert!(new.future_ig_history.is_empty());
        assert_eq!(new.ig_score, 0.3);
    }

    #[test]
    fn merge_takes_max_ig_and_keeps_history() {
        let mut l = Library::new(4, WeightingConfig::default());
        let old = l.add_scored(draft(Kind::Skill, "old", unit(4, 0)), 0.2).unwrap();
        l.push_future_ig(old, 0.1).unwrap();
        let out = l
            .consolidate(draft(Kind::Skill, "new", at_cosine(4, 0.9)), 0.5, 0.8, &mut approve)
            .unwrap();
        assert_eq!(out.placement, Placement::Merged { into: old });
        assert_eq!(l.len(), 1);
        let e = l.get(old).unwrap();
        assert_eq!(e.ig_score, 0.5);
        assert_eq!(e.future_ig_history, vec![0.1]);
        assert_eq!(e.content, "old + new");
        assert_eq!(e.provenance.merged_from[0].absorbed, out.candidate);
    }

    #[test]
    fn merge_never_crosses_kinds() {
        let mut l = Library::new(4, WeightingConfig::default());
        l.add(draft(Kind::Insight, "i", unit(4, 0))).unwrap();
        let out = l
            .consolidate(draft(Kind::Skill, "s", unit(4, 0)), 0.0, 0.8, &mut approve)
            .unwrap();
        assert_eq!(out.placement, Placement::Inserted);
        assert_eq!(out.nearest, None);
    }

    #[test]
    fn decider_failure_falls_back_to_insertion() {
        let mut l = Library::new(4, WeightingConfig::default());
        l.add(draft(Kind::Skill, "old", unit(4, 0))).unwrap();
        let mut failing =
            |_: &Abstraction, _: &Draft| Err(ProviderError::Transport("connection reset".into()));
        let out = l
            .consolidate(draft(Kind::Skill, "new", unit(4, 0)), 0.0, 0.8, &mut failing)
            .unwrap();
        assert_eq!(out.placement, Placement::Inserted);
        assert!(out.decider_error.unwrap().contains("connection reset"));
        assert_eq!(l.len(), 2);
    }

    #[test]
    fn merging_two_entries_concatenates_histories() {
        let mut l = Library::new(4, WeightingConfig::default());
        let a = l.add_scored(draft(Kind::Skill, "a", unit(4, 0)), 0.2).unwrap();
        let b = l.add_scored(draft(Kind::Skill, "b", unit(4, 0)), 0.5).unwrap();
        l.push_future_ig(a, 0.1).unwrap();
        l.push_future_ig(b, 0.3).unwrap();
        l.merge_entries(a, b, "ab".into(), unit(4, 0)).unwrap();
        let e = l.get(a).unwrap();
        assert_eq!(e.ig_score, 0.5);
        assert_eq!(e.future_ig_history, vec![0.1, 0.3]);
        assert!(!l.contains(b));
        assert_eq!(e.provenance.merged_from[0].absorbed, b);
    }
}
