//! A synthetic world with known ground truth.
//!
//! Each task requires a subset of latent skills. A solution's quality is a
//! known linear function of how many required skills the sampled context
//! covers, its self-score is that quality plus clipped Gaussian noise, and the
//! abstractions extracted from it carry `<latent:N>` markers naming the latent
//! skills they rephrase. This lets tests check whether credit assignment finds
//! the useful skills.

mod backend;

use std::collections::BTreeSet;

use rand::distr::{Distribution, Uniform};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

pub use self::backend::{SimBackend, EVALUATE_USAGE, EXTRACT_USAGE, MERGE_USAGE, SOLVE_USAGE};
use crate::extraction::{EvaluationHook, TaskSpec};
use crate::ids::TaskId;
use crate::library::Abstraction;
use crate::providers::latent_tags;

pub const DEFAULT_WORLD_TOML: &str = include_str!("../../assets/worlds/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTask {
    pub id: TaskId,
    pub required: Vec<u32>,
    pub difficulty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_latent_skills: u32,
    pub latent_utilities: Vec<f64>,
    /// Quality reached with no coverage at all.
    pub base_quality: f64,
    pub eval_noise_sigma: f64,
    /// Probability that a generated skill rephrases a latent skill rather than
    /// being a one-off.
    pub duplicate_rate: f64,
    pub embedding_dim: usize,
    pub seed: u64,
    pub tasks: Vec<WorldTask>,
}

/// Knobs for [`WorldSpec::generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub n_latent_skills: u32,
    pub n_tasks: usize,
    pub min_required: usize,
    pub max_required: usize,
    pub min_difficulty: f64,
    pub base_quality: f64,
    pub eval_noise_sigma: f64,
    pub duplicate_rate: f64,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            n_latent_skills: 20,
            n_tasks: 50,
            min_required: 2,
            max_required: 4,
            min_difficulty: 0.6,
            base_quality: 0.2,
            eval_noise_sigma: 0.1,
            duplicate_rate: 0.5,
            embedding_dim: 64,
            seed: 0,
        }
    }
}

/// Mean over `tasks` of the quality a skill adds when it alone is covered:
/// `(1 - q0) * difficulty / |required|` on tasks requiring it, zero elsewhere.
pub fn pool_utilities(n_latent_skills: u32, base_quality: f64, tasks: &[WorldTask]) -> Vec<f64> {
    let mut utilities = vec![0.0; n_latent_skills as usize];
    for task in tasks {
        let gain = (1.0 - base_quality) * task.difficulty / task.required.len() as f64;
        for skill in &task.required {
            utilities[*skill as usize] += gain;
        }
    }
    let n = tasks.len().max(1) as f64;
    utilities.iter_mut().for_each(|u| *u /= n);
    utilities
}

impl WorldSpec {
    /// Each skill gets a popularity uniform on (0, 1], and each task's
    /// required subset is drawn without replacement in proportion to it. A
    /// skill's latent utility is then the true-quality gain it brings, averaged
    /// over the whole pool (see [`pool_utilities`]).
    pub fn generate(params: &WorldParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let n = params.n_latent_skills;
        let unit = Uniform::new_inclusive(0.0f64, 1.0).expect("valid range");
        let popularity: Vec<f64> = (0..n).map(|_| unit.sample(&mut rng).max(1e-3)).collect();
        let size = Uniform::new_inclusive(params.min_required, params.max_required).expect("valid sizes");
        let difficulty = Uniform::new_inclusive(params.min_difficulty, 1.0).expect("valid difficulty");
        let skills: Vec<u32> = (0..n).collect();
        let tasks = (0..params.n_tasks)
            .map(|i| {
                let k = size.sample(&mut rng).min(n as usize);
                let mut required: Vec<u32> = skills
                    .choose_multiple_weighted(&mut rng, k, |s| popularity[*s as usize])
                    .expect("popularities are positive")
                    .copied()
                    .collect();
                required.sort_unstable();
                WorldTask {
                    id: TaskId::new(format!("sim-{i:03}")),
                    required,
                    difficulty: difficulty.sample(&mut rng),
                }
            })
            .collect::<Vec<WorldTask>>();
        let latent_utilities = pool_utilities(n, params.base_quality, &tasks);
        WorldSpec {
            n_latent_skills: n,
            latent_utilities,
            base_quality: params.base_quality,
            eval_noise_sigma: params.eval_noise_sigma,
            duplicate_rate: params.duplicate_rate,
            embedding_dim: params.embedding_dim,
            seed: params.seed,
            tasks,
        }
    }

    /// The shipped default world.
    pub fn default_world() -> Self {
        Self::from_toml(DEFAULT_WORLD_TOML).expect("bundled world is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let world: WorldSpec = toml::from_str(text).map_err(|e| e.to_string())?;
        world.validate()?;
        Ok(world)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("world serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_latent_skills == 0 {
            return Err("n_latent_skills must be positive".into());
        }
        if self.latent_utilities.len() != self.n_latent_skills as usize {
            return Err(format!(
                "latent_utilities has {} values for {} skills",
                self.latent_utilities.len(),
                self.n_latent_skills
            ));
        }
        if let Some(u) = self.latent_utilities.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(format!("latent utility {u} outside [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.base_quality) {
            return Err(format!("base_quality {} outside [0, 1)", self.base_quality));
        }
        if !(self.eval_noise_sigma >= 0.0) {
            return Err(format!("eval_noise_sigma {} must be >= 0", self.eval_noise_sigma));
        }
        if !(0.0..=1.0).contains(&self.duplicate_rate) {
            return Err(format!("duplicate_rate {} outside [0, 1]", self.duplicate_rate));
        }
        if self.embedding_dim < 2 {
            return Err("embedding_dim must be at least 2".into());
        }
        if self.tasks.is_empty() {
            return Err("world has no tasks".into());
        }
        let mut ids = BTreeSet::new();
        for t in &self.tasks {
            if !ids.insert(&t.id) {
                return Err(format!("duplicate task id {}", t.id));
            }
            if t.required.is_empty() {
                return Err(format!("task {} requires no skills", t.id));
            }
            if let Some(s) = t.required.iter().find(|s| **s >= self.n_latent_skills) {
                return Err(format!("task {} requires unknown latent skill {s}", t.id));
            }
            if !(t.difficulty > 0.0 && t.difficulty <= 1.0) {
                return Err(format!("task {} difficulty {} outside (0, 1]", t.id, t.difficulty));
            }
        }
        Ok(())
    }

    /// Tasks as the engine sees them. Descriptions carry the required skills'
    /// markers, so a task embeds close to the skills it needs.
    pub fn task_specs(&self) -> Vec<TaskSpec> {
        self.tasks
            .iter()
            .map(|t| {
                let markers: Vec<String> = t.required.iter().map(|s| format!("<latent:{s}>")).collect();
                TaskSpec {
                    id: t.id.clone(),
                    description: format!("Simulated task {} needing {}", t.id, markers.join(" ")),
                    hook: EvaluationHook::Simulated {
                        required: t.required.clone(),
                        difficulty: t.difficulty,
                    },
                }
            })
            .collect()
    }

    /// Latent skills ordered by utility, highest first (ties by index).
    pub fn utility_ranking(&self) -> Vec<u32> {
        let mut order: Vec<u32> = (0..self.n_latent_skills).collect();
        order.sort_by(|a, b| {
            self.latent_utilities[*b as usize]
                .total_cmp(&self.latent_utilities[*a as usize])
                .then(a.cmp(b))
        });
        order
    }
}

/// `q0 + (1 - q0) * coverage * difficulty`.
pub fn true_quality(base_quality: f64, coverage: f64, difficulty: f64) -> f64 {
    base_quality + (1.0 - base_quality) * coverage * difficulty
}

/// What a simulated solve produced. Serializes to the solution text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimSolution {
    /// Required skills present in the sampled context.
    pub covered: BTreeSet<u32>,
    /// Required skills the solution uses: the covered ones plus one discovery.
    pub exercised: BTreeSet<u32>,
    pub nonce: u64,
}

impl SimSolution {
    pub fn token(&self) -> String {
        let list = |s: &BTreeSet<u32>| s.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        format!(
            "sim-solution covered=[{}] exercised=[{}] nonce={:016x}",
            list(&self.covered),
            list(&self.exercised),
            self.nonce
        )
    }

    pub fn parse(token: &str) -> Option<Self> {
        let mut parts = token.strip_prefix("sim-solution ")?.split(' ');
        let list = |field: &str, part: Option<&str>| -> Option<BTreeSet<u32>> {
            let inner = part?.strip_prefix(field)?.strip_prefix("=[")?.strip_suffix(']')?;
            if inner.is_empty() {
                return Some(BTreeSet::new());
            }
            inner.split(',').map(|s| s.parse().ok()).collect()
        };
        let covered = list("covered", parts.next())?;
        let exercised = list("exercised", parts.next())?;
        let nonce = u64::from_str_radix(parts.next()?.strip_prefix("nonce=")?, 16).ok()?;
        Some(SimSolution {
            covered,
            exercised,
            nonce,
        })
    }
}

/// Latent markers found in any sampled abstraction, skill or insight.
pub fn sampled_tags(sampled: &[&Abstraction]) -> BTreeSet<u32> {
    sampled.iter().flat_map(|a| latent_tags(&a.content)).collect()
}

/// Solves `task` with `sampled` in context.
pub fn simulate_solution(world: &WorldSpec, task: &WorldTask, sampled: &[&Abstraction], seed: u64) -> (SimSolution, f64) {
    simulate_with_tags(world, &task.required, task.difficulty, &sampled_tags(sampled), seed)
}

/// Solves a task needing `required` when the context covers `sampled`. One
/// required skill not covered by the context, chosen by `seed`, is discovered
/// and exercised as well.
pub fn simulate_with_tags(
    world: &WorldSpec,
    required: &[u32],
    difficulty: f64,
    sampled: &BTreeSet<u32>,
    seed: u64,
) -> (SimSolution, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let required: BTreeSet<u32> = required.iter().copied().collect();
    let covered: BTreeSet<u32> = required.intersection(sampled).copied().collect();
    let uncovered: Vec<u32> = required.difference(&covered).copied().collect();
    let mut exercised = covered.clone();
    if let Some(fresh) = uncovered.choose(&mut rng) {
        exercised.insert(*fresh);
    }
    let coverage = covered.len() as f64 / required.len() as f64;
    let quality = true_quality(world.base_quality, coverage, difficulty);
    let nonce = rand::Rng::random(&mut rng);
    (
        SimSolution {
            covered,
            exercised,
            nonce,
        },
        quality,
    )
}

/// `true_quality` plus Gaussian noise, clipped to [0, 1].
pub fn noisy_self_score(true_quality: f64, sigma: f64, seed: u64) -> f64 {
    if sigma == 0.0 {
        return true_quality.clamp(0.0, 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma is finite and non-negative");
    (true_quality + noise.sample(&mut rng)).clamp(0.0, 1.0)
}
