//! Exact nearest-neighbour search over text and image stores with weighted
//! score fusion.
//!
//! Scores are inner products of unit vectors, i.e. cosine similarities.
//! Results are ordered by descending score; equal scores are ordered by
//! ascending `owner_id` so that replays are identical across platforms.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::embedding::{dot, ensure_unit, EmbeddingError, Modality, Vector, VectorStore, UNIT_TOLERANCE};

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("cannot build an index from an empty store")]
    EmptyStore,
    #[error("query dimension {got} does not match index dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("query vector is not unit length (norm {0})")]
    NotUnit(f64),
    #[error("text and image indices cover different owners ({0} differ)")]
    OwnerMismatch(usize),
    #[error("multimodal retrieval needs an image index")]
    MissingImageIndex,
    #[error("invalid retrieval config: {0}")]
    Config(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// How several vectors belonging to one owner, or one query, are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    TextOnly,
    #[default]
    Multimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Weight of the text similarity; the image similarity gets `1 - alpha`.
    pub alpha: f64,
    pub k: usize,
    pub mode: RetrievalMode,
    pub image_aggregation: Aggregation,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            k: 2,
            mode: RetrievalMode::Multimodal,
            image_aggregation: Aggregation::Mean,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RetrievalError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.k == 0 {
            return Err(RetrievalError::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// A flat index with one row per owner.
///
/// With [`Aggregation::Mean`] an owner's row is the renormalized mean of its
/// item vectors. With [`Aggregation::Max`] the item vectors are kept and an
/// owner scores as its best-matching item.
#[derive(Debug, Clone)]
pub struct Index {
    modality: Modality,
    dim: usize,
    aggregation: Aggregation,
    ids: Vec<String>,
    rows: Vec<Vec<f32>>,
    items: Vec<Vec<Vec<f32>>>,
}

pub fn build_index(store: &VectorStore, aggregation: Aggregation) -> Result<Index, RetrievalError> {
    if store.is_empty() {
        return Err(RetrievalError::EmptyStore);
    }
    let mut ids: Vec<String> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut items: Vec<Vec<Vec<f32>>> = Vec::new();
    for e in store.entries() {
        let idx = *slot.entry(e.owner_id.as_str()).or_insert_with(|| {
            ids.push(e.owner_id.clone());
            items.push(Vec::new());
            ids.len() - 1
        });
        items[idx].push(ensure_unit(e.vector.clone())?.into_inner());
    }

    let dim = store.dim();
    let rows = items
        .iter()
        .map(|vs| {
            if vs.len() == 1 {
                return Ok(vs[0].clone());
            }
            let mut acc = vec![0f64; dim];
            for v in vs {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += f64::from(*x);
                }
            }
            let mean: Vec<f32> = acc.iter().map(|a| (a / vs.len() as f64) as f32).collect();
            ensure_unit(Vector::new(mean)).map(Vector::into_inner)
        })
        .collect::<Result<Vec<_>, EmbeddingError>>()?;

    Ok(Index {
        modality: store.modality(),
        dim,
        aggregation,
        ids,
        rows,
        items,
    })
}

impl Index {
    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i]
    }

    fn check_query(&self, query: &Vector) -> Result<(), RetrievalError> {
        if query.dim() != self.dim {
            return Err(RetrievalError::DimMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let norm = query.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE * 10.0 {
            return Err(RetrievalError::NotUnit(norm));
        }
        Ok(())
    }

    fn owner_score(&self, i: usize, query: &[f32]) -> f64 {
        match self.aggregation {
            Aggregation::Mean => dot(&self.rows[i], query),
            Aggregation::Max => self.items[i]
                .iter()
                .map(|v| dot(v, query))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    fn scores(&self, query: &Vector) -> Vec<f64> {
        (0..self.ids.len())
            .map(|i| self.owner_score(i, query.as_slice()))
            .collect()
    }
}

fn rank_order(a: (&str, f64), b: (&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// The `k` best owners by inner product, best first.
pub fn knn(index: &Index, query: &Vector, k: usize) -> Result<Vec<(String, f64)>, RetrievalError> {
    index.check_query(query)?;
    let scores = index.scores(query);
    let mut ranked: Vec<(String, f64)> = index.ids.iter().cloned().zip(scores).collect();
    ranked.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
    ranked.truncate(k);
    Ok(ranked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarHit {
    pub owner_id: String,
    pub text_score: f64,
    pub image_score: Option<f64>,
    pub fused_score: f64,
}

/// Retrieve the top-k owners by `alpha * text + (1 - alpha) * image`.
///
/// The image similarity of an owner is the per-query-image similarity
/// combined over the query images with `cfg.image_aggregation`. Owners in
/// `exclude` are never returned. In text-only mode, or when the query has no
/// images, the ranking is plain text similarity.
pub fn fused_retrieve(
    text_index: &Index,
    image_index: Option<&Index>,
    q_text: &Vector,
    q_images: &[Vector],
    cfg: &RetrievalConfig,
    exclude: &HashSet<String>,
) -> Result<Vec<ExemplarHit>, RetrievalError> {
    cfg.validate()?;
    text_index.check_query(q_text)?;
    let text_scores = text_index.scores(q_text);

    let mut multimodal = cfg.mode == RetrievalMode::Multimodal;
    if multimodal && q_images.is_empty() {
        warn!("query has no image vectors, falling back to text-only retrieval");
        multimodal = false;
    }

    let image_scores: Option<HashMap<&str, f64>> = if multimodal {
        let image_index = image_index.ok_or(RetrievalError::MissingImageIndex)?;
        if text_index.ids != image_index.ids {
            let text_ids: BTreeSet<&str> = text_index.ids.iter().map(String::as_str).collect();
            let image_ids: BTreeSet<&str> = image_index.ids.iter().map(String::as_str).collect();
            let differing = text_ids.symmetric_difference(&image_ids).count();
            if differing > 0 {
                return Err(RetrievalError::OwnerMismatch(differing));
            }
        }
        for q in q_images {
            image_index.check_query(q)?;
        }
        let per_query: Vec<Vec<f64>> = q_images.iter().map(|q| image_index.scores(q)).collect();
        let combined = (0..image_index.len()).map(|i| {
            let column = per_query.iter().map(|s| s[i]);
            let agg = match cfg.image_aggregation {
                Aggregation::Mean => column.sum::<f64>() / q_images.len() as f64,
                Aggregation::Max => column.fold(f64::NEG_INFINITY, f64::max),
            };
            (image_index.ids[i].as_str(), agg)
        });
        Some(combined.collect())
    } else {
        None
    };

    let mut hits: Vec<ExemplarHit> = text_index
        .ids
        .iter()
        .zip(&text_scores)
        .filter(|(id, _)| !exclude.contains(*id))
        .map(|(id, &text_score)| {
            let image_score = image_scores.as_ref().map(|m| m[id.as_str()]);
            let fused_score = match image_score {
                Some(img) => cfg.alpha * text_score + (1.0 - cfg.alpha) * img,
                None => text_score,
            };
            ExemplarHit {
                owner_id: id.clone(),
                text_score,
                image_score,
                fused_score,
            }
        })
        .collect();
    hits.sort_by(|a, b| rank_order((&a.owner_id, a.fused_score), (&b.owner_id, b.fused_score)));
    hits.truncate(cfg.k);
    Ok(hits)
}
