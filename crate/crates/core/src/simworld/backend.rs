use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{noisy_self_score, sampled_tags, simulate_with_tags, true_quality, SimSolution, WorldSpec};
use crate::cost::Usage;
use crate::engine::{Backend, Billed, Candidate};
use crate::error::ProviderError;
use crate::extraction::{EvaluationHook, ScoreMethod, SelfScore, TaskSpec};
use crate::library::{Abstraction, Draft, Kind, MergeDecision};
use crate::providers::{latent_tags, Embedder, HashEmbedder};

pub const SOLVE_USAGE: Usage = Usage {
    input_tokens: 600,
    output_tokens: 250,
};
pub const EVALUATE_USAGE: Usage = Usage {
    input_tokens: 150,
    output_tokens: 10,
};
pub const EXTRACT_USAGE: Usage = Usage {
    input_tokens: 800,
    output_tokens: 200,
};
pub const MERGE_USAGE: Usage = Usage {
    input_tokens: 300,
    output_tokens: 120,
};

/// Stops a run of one-off skills when the duplicate rate is tiny.
const MAX_ONE_OFFS: usize = 8;

/// Stands in for the model using a [`WorldSpec`]. Fully determined by the
/// world and the seeds the engine passes in.
#[derive(Debug, Clone)]
pub struct SimBackend {
    world: WorldSpec,
    embedder: HashEmbedder,
}

impl SimBackend {
    pub fn new(world: WorldSpec) -> Self {
        let embedder = HashEmbedder::new(world.embedding_dim, world.seed);
        SimBackend { world, embedder }
    }

    pub fn world(&self) -> &WorldSpec {
        &self.world
    }

    fn hook(task: &TaskSpec) -> Result<(&[u32], f64), ProviderError> {
        match &task.hook {
            EvaluationHook::Simulated { required, difficulty } => Ok((required, *difficulty)),
            _ => Err(ProviderError::InvalidRequest(format!(
                "task {} is not a simulated-world task",
                task.id
            ))),
        }
    }

    fn parse(solution: &str) -> Result<SimSolution, ProviderError> {
        SimSolution::parse(solution).ok_or_else(|| ProviderError::Malformed(format!("not a simulated solution: {solution}")))
    }

    fn candidate(&self, kind: Kind, content: String) -> Result<Candidate, ProviderError> {
        let embedding = self.embedder.embed(&content)?;
        Ok(Candidate {
            kind,
            content,
            embedding,
        })
    }

    /// Each exercised latent skill yields one rephrasing carrying its marker.
    /// Before it, every generated skill is a one-off with probability
    /// `1 - duplicate_rate`. One insight names a required skill the solution
    /// did not exercise, if there is one.
    pub fn extract_candidates(&self, task: &TaskSpec, solution: &str, seed: u64) -> Result<Vec<Candidate>, ProviderError> {
        let (required, _) = Self::hook(task)?;
        let sol = Self::parse(solution)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for skill in &sol.exercised {
            let mut one_offs = 0;
            while one_offs < MAX_ONE_OFFS && !rng.random_bool(self.world.duplicate_rate) {
                let tag: u64 = rng.random();
                out.push(self.candidate(Kind::Skill, format!("one-off procedure {tag:016x} from {}", task.id))?);
                one_offs += 1;
            }
            let variant: u64 = rng.random();
            out.push(self.candidate(
                Kind::Skill,
                format!("<latent:{skill}> procedure for requirement {skill} (variant {variant:016x})"),
            )?);
        }
        let missing: Vec<u32> = required.iter().copied().filter(|s| !sol.exercised.contains(s)).collect();
        if !missing.is_empty() {
            let m = missing[rng.random_range(0..missing.len())];
            let note: u64 = rng.random();
            out.push(self.candidate(
                Kind::Insight,
                format!("<latent:{m}> tasks like {} also need requirement {m} (note {note:016x})", task.id),
            )?);
        }
        Ok(out)
    }

    /// Merge iff both carry the same non-empty set of latent markers. The
    /// survivor keeps its text and embedding.
    pub fn decide_merge(existing: &Abstraction, candidate: &Draft) -> MergeDecision {
        let tags = latent_tags(&existing.content);
        if !tags.is_empty() && tags == latent_tags(&candidate.content) {
            MergeDecision::Merge {
                content: existing.content.clone(),
                embedding: existing.embedding.clone(),
            }
        } else {
            MergeDecision::Keep
        }
    }
}

impl Backend for SimBackend {
    fn embedder(&self) -> &dyn Embedder {
        &self.embedder
    }

    fn solve(&self, task: &TaskSpec, context: &[&Abstraction], seed: u64) -> Result<Billed<String>, ProviderError> {
        let (required, difficulty) = Self::hook(task)?;
        let (solution, _) = simulate_with_tags(&self.world, required, difficulty, &sampled_tags(context), seed);
        Ok(Billed::new(solution.token(), SOLVE_USAGE))
    }

    fn evaluate(&self, task: &TaskSpec, solution: &str, _peers: &[&str], seed: u64) -> Result<Billed<SelfScore>, ProviderError> {
        let (required, difficulty) = Self::hook(task)?;
        let sol = Self::parse(solution)?;
        let coverage = sol.covered.len() as f64 / required.len() as f64;
        let quality = true_quality(self.world.base_quality, coverage, difficulty);
        let value = noisy_self_score(quality, self.world.eval_noise_sigma, seed);
        Ok(Billed::new(
            SelfScore::new(value, ScoreMethod::SimulatedOracle, format!("true quality {quality}")),
            EVALUATE_USAGE,
        ))
    }

    fn extract(&self, task: &TaskSpec, solution: &str, _score: &SelfScore, seed: u64) -> Result<Billed<Vec<Candidate>>, ProviderError> {
        Ok(Billed::new(self.extract_candidates(task, solution, seed)?, EXTRACT_USAGE))
    }

    fn merge(&self, existing: &Abstraction, candidate: &Draft) -> Result<Billed<MergeDecision>, ProviderError> {
        Ok(Billed::new(Self::decide_merge(existing, candidate), MERGE_USAGE))
    }
}
