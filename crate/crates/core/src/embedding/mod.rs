//! Embedding vectors, vector-store files and embedding providers.

mod provider;
mod store;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use provider::{
    fnv1a64, EmbeddingProvider, FileProvider, HttpProvider, HttpProviderConfig, MockProvider,
    ProviderKind,
};
pub(crate) use provider::SplitMix64;
pub use store::{load_vector_store, save_vector_store, StoreEntry, VectorStore};

pub const DEFAULT_TEXT_DIM: usize = 384;
pub const DEFAULT_IMAGE_DIM: usize = 512;

/// Tolerance on the L2 norm of a normalized vector.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("degenerate vector")]
    Degenerate,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("provider serves {provider} embeddings, {requested} requested")]
    WrongModality { provider: Modality, requested: Modality },
    #[error("no vector for owner `{owner_id}` item {item_index}")]
    MissingVector { owner_id: String, item_index: usize },
    #[error("duplicate vector for owner `{owner_id}` item {item_index}")]
    DuplicateKey { owner_id: String, item_index: usize },
    #[error("text vectors must use item_index 0 (owner `{0}`)")]
    TextItemIndex(String),
    #[error("vector store {path}: {reason}")]
    StoreFile { path: String, reason: String },
    #[error("failed to read image {path}: {source}")]
    ImageRead {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("embedding request failed after {attempts} attempt(s) (status {status:?}): {body}")]
    Http {
        status: Option<u16>,
        body: String,
        attempts: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Image,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
        })
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

/// A dense embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f32>);

impl Vector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Inner product, accumulated in `f64`.
    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl From<Vec<f32>> for Vector {
    fn from(v: Vec<f32>) -> Self {
        Self(v)
    }
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Scale to unit L2 norm. All-zero or non-finite input is rejected.
pub fn l2_normalize(v: &Vector) -> Result<Vector, EmbeddingError> {
    if v.0.iter().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::Degenerate);
    }
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbeddingError::Degenerate);
    }
    Ok(Vector(v.0.iter().map(|&x| (f64::from(x) / norm) as f32).collect()))
}

/// Normalize only when the vector is not already unit length, so stored
/// unit vectors come back bit-identical.
pub fn ensure_unit(v: Vector) -> Result<Vector, EmbeddingError> {
    if v.is_unit() {
        Ok(v)
    } else {
        l2_normalize(&v)
    }
}
