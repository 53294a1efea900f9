//! Offline providers with seeded, hash-derived outputs.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{estimate_tokens, ChatProvider, CompletionRequest, CompletionResult, Embedder};
use crate::error::ProviderError;
use crate::library::Embedding;

/// Lower bound on the cosine between two texts carrying the same single latent tag.
pub const LATENT_SIMILARITY: f64 = 0.9;

pub(crate) fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Latent skill ids marked as `<latent:N>` in `text`.
pub fn latent_tags(text: &str) -> BTreeSet<u32> {
    const OPEN: &str = "<latent:";
    let mut tags = BTreeSet::new();
    let mut rest = text;
    while let Some(start) = rest.find(OPEN) {
        rest = &rest[start + OPEN.len()..];
        if let Some(end) = rest.find('>') {
            if let Ok(n) = rest[..end].parse() {
                tags.insert(n);
            }
        }
    }
    tags
}

/// Deterministic embedder. Texts without latent markers map to pseudo-random
/// unit vectors keyed by their hash. Texts with markers are rotated by a fixed
/// angle away from the normalized sum of their tags' directions, so two texts
/// sharing exactly one tag have cosine at least [`LATENT_SIMILARITY`].
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 2, "embedding dimension must be at least 2");
        HashEmbedder { dim, seed }
    }

    fn gaussian(&self, key: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn unit(mut v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    fn tag_direction(&self, tag: u32) -> Vec<f64> {
        Self::unit(self.gaussian(hash_seed(&[b"tag", &self.seed.to_le_bytes(), &tag.to_le_bytes()])))
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let noise = Self::unit(self.gaussian(hash_seed(&[b"text", &self.seed.to_le_bytes(), text.as_bytes()])));
        let tags = latent_tags(text);
        if tags.is_empty() {
            return noise;
        }
        let mut base = vec![0.0; self.dim];
        for tag in &tags {
            for (b, t) in base.iter_mut().zip(self.tag_direction(*tag)) {
                *b += t;
            }
        }
        let base = Self::unit(base);
        let along: f64 = noise.iter().zip(&base).map(|(a, b)| a * b).sum();
        let ortho = Self::unit(noise.iter().zip(&base).map(|(n, b)| n - along * b).collect());
        // cos(2 * theta) = LATENT_SIMILARITY bounds same-tag similarity from below
        let theta = 0.5 * LATENT_SIMILARITY.acos();
        let (s, c) = theta.sin_cos();
        Self::unit(base.iter().zip(&ortho).map(|(b, o)| c * b + s * o).collect())
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidRequest("cannot embed empty text".into()));
        }
        Embedding::normalize(self.vector(text)).map_err(|e| ProviderError::Malformed(e.to_string()))
    }
}

/// Chat stand-in that answers every request with a hash of it.
#[derive(Debug, Clone)]
pub struct SimulatedChat {
    seed: u64,
}

impl SimulatedChat {
    pub fn new(seed: u64) -> Self {
        SimulatedChat { seed }
    }
}

impl ChatProvider for SimulatedChat {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        request.validate()?;
        let body = serde_json::to_vec(&request.messages).map_err(|e| ProviderError::InvalidRequest(e.to_string()))?;
        let key = hash_seed(&[b"chat", &self.seed.to_le_bytes(), &body]);
        let text = format!("simulated response {key:016x}");
        Ok(CompletionResult {
            input_tokens: estimate_tokens(request.prompt_chars()),
            output_tokens: estimate_tokens(text.len()),
            text,
            estimated: true,
        })
    }
}
