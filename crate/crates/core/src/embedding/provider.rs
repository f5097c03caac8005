use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Semaphore;

use super::{ensure_unit, l2_normalize, EmbeddingError, Modality, Vector, VectorStore};
use crate::corpus::ImageRef;
use crate::media::encode_image_bytes;
use crate::retry::{post_json, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    File,
    Http,
    Mock,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) struct SplitMix64(u64);

impl SplitMix64 {
    pub(crate) fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub(crate) fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    fn next_signed(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

/// Deterministic pseudo-random unit vectors seeded by the input bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockProvider {
    pub modality: Modality,
    pub dim: usize,
}

impl MockProvider {
    pub fn new(modality: Modality, dim: usize) -> Self {
        Self { modality, dim }
    }

    pub fn embed_bytes(&self, bytes: &[u8]) -> Vector {
        let mut rng = SplitMix64::new(fnv1a64(bytes));
        loop {
            let raw: Vec<f32> = (0..self.dim).map(|_| rng.next_signed() as f32).collect();
            if let Ok(v) = l2_normalize(&Vector::new(raw)) {
                return v;
            }
        }
    }
}

/// Serves precomputed vectors from a store; the input content is ignored.
#[derive(Debug, Clone)]
pub struct FileProvider {
    store: Arc<VectorStore>,
}

impl FileProvider {
    pub fn new(store: VectorStore) -> Self {
        Self {
            store: Arc::new(store),
        }
    }

    pub fn store(&self) -> &VectorStore {
        &self.store
    }

    fn lookup(&self, owner_id: &str, item_index: usize) -> Result<Vector, EmbeddingError> {
        let v = self
            .store
            .get(owner_id, item_index)
            .cloned()
            .ok_or_else(|| EmbeddingError::MissingVector {
                owner_id: owner_id.to_string(),
                item_index,
            })?;
        ensure_unit(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    pub endpoint: String,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Square edge images are resized to before encoding; `None` sends the file bytes.
    #[serde(default = "default_resize")]
    pub resize_edge: Option<u32>,
}

fn default_resize() -> Option<u32> {
    Some(crate::media::DEFAULT_RESIZE_EDGE)
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    60
}

/// Remote encoder: `POST {"inputs": [...]}` returning `{"vectors": [[...]]}`.
/// Images are sent base64-encoded.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    client: reqwest::Client,
    config: HttpProviderConfig,
    modality: Modality,
    dim: usize,
    permits: Arc<Semaphore>,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig, modality: Modality, dim: usize) -> Self {
        let client = reqwest::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .expect("http client builds");
        let permits = Arc::new(Semaphore::new(config.max_in_flight.max(1)));
        Self {
            client,
            config,
            modality,
            dim,
            permits,
        }
    }

    async fn embed_input(&self, input: String) -> Result<Vector, EmbeddingError> {
        let _permit = self.permits.acquire().await.expect("semaphore open");
        let body = json!({ "inputs": [input] });
        let (reply, attempts) = post_json(
            &self.client,
            &self.config.endpoint,
            &self.config.headers,
            &body,
            &self.config.retry,
        )
        .await
        .map_err(|f| EmbeddingError::Http {
            status: f.status,
            body: f.body,
            attempts: f.attempts,
        })?;
        let bad = |why: &str| EmbeddingError::Http {
            status: Some(200),
            body: format!("{why}: {reply}"),
            attempts,
        };
        let row = reply
            .get("vectors")
            .and_then(Value::as_array)
            .and_then(|rows| rows.first())
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing vectors"))?;
        let values = row
            .iter()
            .map(|x| x.as_f64().map(|f| f as f32))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| bad("non-numeric vector"))?;
        if values.len() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                got: values.len(),
            });
        }
        l2_normalize(&Vector::new(values))
    }
}

/// A source of embeddings for one modality.
#[derive(Debug, Clone)]
pub enum EmbeddingProvider {
    File(FileProvider),
    Http(HttpProvider),
    Mock(MockProvider),
}

impl EmbeddingProvider {
    pub fn kind(&self) -> ProviderKind {
        match self {
            EmbeddingProvider::File(_) => ProviderKind::File,
            EmbeddingProvider::Http(_) => ProviderKind::Http,
            EmbeddingProvider::Mock(_) => ProviderKind::Mock,
        }
    }

    pub fn modality(&self) -> Modality {
        match self {
            EmbeddingProvider::File(p) => p.store.modality(),
            EmbeddingProvider::Http(p) => p.modality,
            EmbeddingProvider::Mock(p) => p.modality,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EmbeddingProvider::File(p) => p.store.dim(),
            EmbeddingProvider::Http(p) => p.dim,
            EmbeddingProvider::Mock(p) => p.dim,
        }
    }

    fn expect_modality(&self, requested: Modality) -> Result<(), EmbeddingError> {
        if self.modality() == requested {
            Ok(())
        } else {
            Err(EmbeddingError::WrongModality {
                provider: self.modality(),
                requested,
            })
        }
    }

    pub async fn embed_text(&self, owner_id: &str, text: &str) -> Result<Vector, EmbeddingError> {
        self.expect_modality(Modality::Text)?;
        match self {
            EmbeddingProvider::File(p) => p.lookup(owner_id, 0),
            EmbeddingProvider::Mock(p) => Ok(p.embed_bytes(text.as_bytes())),
            EmbeddingProvider::Http(p) => p.embed_input(text.to_string()).await,
        }
    }

    pub async fn embed_image(
        &self,
        owner_id: &str,
        item_index: usize,
        image: &ImageRef,
    ) -> Result<Vector, EmbeddingError> {
        self.expect_modality(Modality::Image)?;
        if let EmbeddingProvider::File(p) = self {
            return p.lookup(owner_id, item_index);
        }
        let bytes = tokio::fs::read(&image.path)
            .await
            .map_err(|source| EmbeddingError::ImageRead {
                path: image.path.display().to_string(),
                source,
            })?;
        match self {
            EmbeddingProvider::Mock(p) => Ok(p.embed_bytes(&bytes)),
            EmbeddingProvider::Http(p) => {
                let encoded = encode_image_bytes(&bytes, "image/jpeg", p.config.resize_edge)
                    .map_err(|reason| EmbeddingError::ImageRead {
                        path: image.path.display().to_string(),
                        source: std::io::Error::new(std::io::ErrorKind::InvalidData, reason),
                    })?;
                p.embed_input(encoded.base64).await
            }
            EmbeddingProvider::File(_) => unreachable!(),
        }
    }
}
