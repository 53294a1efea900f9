use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AbstractionId, Embedding, Kind, Library};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub task_embedding: Embedding,
    /// Entries with cosine similarity below this are never sampled.
    pub similarity_threshold: f64,
    pub max_skills: usize,
    pub max_insights: usize,
    pub rng_seed: Option<u64>,
}

impl SampleRequest {
    pub fn new(task_embedding: Embedding) -> Self {
        SampleRequest {
            task_embedding,
            similarity_threshold: 0.0,
            max_skills: 10,
            max_insights: 10,
            rng_seed: None,
        }
    }

    fn cap(&self, kind: Kind) -> usize {
        match kind {
            Kind::Skill => self.max_skills,
            Kind::Insight => self.max_insights,
        }
    }
}

/// Temperature-1 softmax, shifted by the maximum for stability.
pub fn softmax(weights: &[f64]) -> Vec<f64> {
    let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

impl Library {
    /// Entries of `kind` passing the similarity filter, with their weights, in id order.
    pub fn candidates(&self, request: &SampleRequest, kind: Kind) -> Vec<(AbstractionId, f64)> {
        self.iter()
            .filter(|a| a.kind == kind)
            .filter(|a| request.task_embedding.cosine(&a.embedding) >= request.similarity_threshold)
            .map(|a| (a.id, a.weight(self.config())))
            .collect()
    }

    /// Draws up to the per-kind caps without replacement. Within each kind the
    /// next pick is softmax-distributed over the remaining candidates' weights.
    /// Skills come first in the returned order, then insights.
    pub fn sample(&self, request: &SampleRequest) -> Vec<AbstractionId> {
        let mut rng = match request.rng_seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_os_rng(),
        };
        let mut picked = Vec::new();
        for kind in [Kind::Skill, Kind::Insight] {
            let candidates = self.candidates(request, kind);
            picked.extend(draw_without_replacement(&candidates, request.cap(kind), &mut rng));
        }
        picked
    }
}

fn draw_without_replacement(
    candidates: &[(AbstractionId, f64)],
    cap: usize,
    rng: &mut impl Rng,
) -> Vec<AbstractionId> {
    if candidates.is_empty() || cap == 0 {
        return Vec::new();
    }
    let weights: Vec<f64> = candidates.iter().map(|&(_, w)| w).collect();
    let mut pool: Vec<(AbstractionId, f64)> = candidates
        .iter()
        .zip(softmax(&weights))
        .map(|(&(id, _), p)| (id, p))
        .collect();
    let mut out = Vec::with_capacity(cap.min(pool.len()));
    while out.len() < cap && !pool.is_empty() {
        let total: f64 = pool.iter().map(|&(_, p)| p).sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = pool.len() - 1;
        for (i, &(_, p)) in pool.iter().enumerate() {
            acc += p;
            if target < acc {
                chosen = i;
                break;
            }
        }
        out.push(pool.remove(chosen).0);
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::super::test_support::*;
    use super::*;
    use crate::credit::WeightingConfig;

    fn request(seed: u64) -> SampleRequest {
        SampleRequest {
            rng_seed: Some(seed),
            ..SampleRequest::new(unit(4, 0))
        }
    }

    #[test]
    fn empty_library_yields_nothing() {
        let l = Library::new(4, WeightingConfig::default());
        assert!(l.sample(&request(1)).is_empty());
    }

    #[test]
    fn equal_weights_are_uniform() {
        let mut l = Library::new(4, WeightingConfig::default());
        let a = l.add(draft(Kind::Skill, "a", unit(4, 0))).unwrap();
        let _b = l.add(draft(Kind::Skill, "b", unit(4, 0))).unwrap();
        let mut req = request(0);
        req.max_skills = 1;
        let n = 10_000;
        let hits = (0..n)
            .filter(|&s| {
                req.rng_seed = Some(s);
                l.sample(&req) == vec![a]
            })
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.5).abs() <= 0.02, "freq {freq}");
    }

    #[test]
    fn caps_limit_distinct_picks() {
        let mut l = Library::new(4, WeightingConfig::default());
        for i in 0..15 {
            l.add(draft(Kind::Skill, &format!("s{i}"), unit(4, 0))).unwrap();
        }
        let got = l.sample(&request(3));
        assert_eq!(got.len(), 10);
        assert_eq!(got.iter().collect::<BTreeSet<_>>().len(), 10);
    }

    #[test]
    fn threshold_filters_and_kinds_are_capped_separately() {
        let mut l = Library::new(4, WeightingConfig::default());
        let near = l.add(draft(Kind::Skill, "near", at_cosine(4, 0.5))).unwrap();
        let _far = l.add(draft(Kind::Skill, "far", at_cosine(4, 0.1))).unwrap();
        let ins = l.add(draft(Kind::Insight, "i", unit(4, 0))).unwrap();
        let mut req = request(9);
        req.similarity_threshold = 0.2;
        assert_eq!(l.sample(&req), vec![near, ins]);
        req.max_insights = 0;
        assert_eq!(l.sample(&req), vec![near]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut l = Library::new(4, WeightingConfig::default());
        for i in 0..30 {
            let id = l.add(draft(Kind::Skill, &format!("s{i}"), unit(4, 0))).unwrap();
            l.push_future_ig(id, i as f64 / 10.0).unwrap();
        }
        assert_eq!(l.sample(&request(42)), l.sample(&request(42)));
    }

    #[test]
    fn softmax_handles_negative_weights() {
        let p = softmax(&[-3.0, 0.0, 1.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x > 0.0));
        let e: Vec<f64> = [-3.0f64, 0.0, 1.0].iter().map(|w| w.exp()).collect();
        let z: f64 = e.iter().sum();
        for (a, b) in p.iter().zip(e.iter().map(|x| x / z)) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
