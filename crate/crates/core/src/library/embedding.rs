use serde::{Deserialize, Serialize};

use crate::error::LibraryError;

/// Tolerance on the unit-norm invariant.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A unit-normalized real vector. Similarity between embeddings is their dot product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalizes `values` to unit length.
    pub fn normalize(values: Vec<f64>) -> Result<Self, LibraryError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(LibraryError::DegenerateEmbedding);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(LibraryError::DegenerateEmbedding);
        }
        Ok(Embedding(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Wraps an already-normalized vector without touching its bits.
    pub fn from_unit(values: Vec<f64>) -> Result<Self, LibraryError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(LibraryError::DegenerateEmbedding);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(LibraryError::NotNormalized { norm });
        }
        Ok(Embedding(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = LibraryError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Embedding::from_unit(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}
