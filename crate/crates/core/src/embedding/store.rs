use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, Modality, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub owner_id: String,
    pub item_index: usize,
    pub vector: Vector,
}

/// Embeddings of one modality keyed by `(owner_id, item_index)`.
///
/// File layout (JSON): `{"modality", "dim", "encoder_name", "entries": [{"owner_id",
/// "item_index", "vector": [...]}]}`. Floats are written in shortest
/// round-trip form, so save followed by load is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorStore {
    modality: Modality,
    dim: usize,
    encoder_name: String,
    entries: Vec<StoreEntry>,
    #[serde(skip)]
    keys: HashMap<(String, usize), usize>,
}

#[derive(Deserialize)]
struct StoreFile {
    modality: Modality,
    dim: usize,
    encoder_name: String,
    #[serde(default)]
    entries: Vec<StoreEntry>,
}

impl VectorStore {
    pub fn new(modality: Modality, dim: usize, encoder_name: impl Into<String>) -> Self {
        Self {
            modality,
            dim,
            encoder_name: encoder_name.into(),
            entries: Vec::new(),
            keys: HashMap::new(),
        }
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn entries(&self) -> &[StoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(
        &mut self,
        owner_id: impl Into<String>,
        item_index: usize,
        vector: Vector,
    ) -> Result<(), EmbeddingError> {
        let owner_id = owner_id.into();
        if vector.dim() != self.dim {
            return Err(EmbeddingError::DimMismatch {
                expected: self.dim,
                got: vector.dim(),
            });
        }
        if vector.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::Degenerate);
        }
        if self.modality == Modality::Text && item_index != 0 {
            return Err(EmbeddingError::TextItemIndex(owner_id));
        }
        let key = (owner_id.clone(), item_index);
        if self.keys.contains_key(&key) {
            return Err(EmbeddingError::DuplicateKey {
                owner_id,
                item_index,
            });
        }
        self.keys.insert(key, self.entries.len());
        self.entries.push(StoreEntry {
            owner_id,
            item_index,
            vector,
        });
        Ok(())
    }

    pub fn get(&self, owner_id: &str, item_index: usize) -> Option<&Vector> {
        self.keys
            .get(&(owner_id.to_string(), item_index))
            .map(|&i| &self.entries[i].vector)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: StoreFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if file.dim == 0 {
            return Err("dim must be positive".into());
        }
        let mut store = VectorStore::new(file.modality, file.dim, file.encoder_name);
        for (i, e) in file.entries.into_iter().enumerate() {
            store
                .push(e.owner_id, e.item_index, e.vector)
                .map_err(|err| format!("entry {i}: {err}"))?;
        }
        Ok(store)
    }
}

pub fn save_vector_store(store: &VectorStore, path: &Path) -> Result<(), EmbeddingError> {
    std::fs::write(path, store.to_json()).map_err(|e| EmbeddingError::StoreFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load_vector_store(path: &Path) -> Result<VectorStore, EmbeddingError> {
    let err = |reason: String| EmbeddingError::StoreFile {
        path: path.display().to_string(),
        reason,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    VectorStore::from_json(&text).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_entry_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.json");
        let mut s = VectorStore::new(Modality::Image, 3, "clip");
        s.push("e1", 0, Vector::new(vec![0.1, 0.2, 0.3])).unwrap();
        s.push("e1", 1, Vector::new(vec![1.0 / 3.0, -0.0, 7e-12])).unwrap();
        s.push("e2", 0, Vector::new(vec![f32::MIN_POSITIVE, f32::MAX, -1.5])).unwrap();
        save_vector_store(&s, &path).unwrap();
        let back = load_vector_store(&path).unwrap();
        assert_eq!(back, s);
        for (a, b) in s.entries().iter().zip(back.entries()) {
            let bits = |v: &Vector| v.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.vector), bits(&b.vector));
        }
    }

    #[test]
    fn short_row_is_fatal() {
        let row: Vec<f32> = vec![0.0; 383];
        let text = serde_json::json!({
            "modality": "text", "dim": 384, "encoder_name": "minilm",
            "entries": [{"owner_id": "e1", "item_index": 0, "vector": row}]
        })
        .to_string();
        let err = VectorStore::from_json(&text).unwrap_err();
        assert!(err.contains("expected 384, got 383"), "{err}");
    }

    #[test]
    fn empty_store_loads() {
        let text = r#"{"modality":"text","dim":384,"encoder_name":"minilm","entries":[]}"#;
        let s = VectorStore::from_json(text).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.dim(), 384);
    }

    #[test]
    fn duplicate_key_and_text_index_are_fatal() {
        let dup = r#"{"modality":"image","dim":1,"encoder_name":"x","entries":[
            {"owner_id":"a","item_index":0,"vector":[1.0]},
            {"owner_id":"a","item_index":0,"vector":[1.0]}]}"#;
        assert!(VectorStore::from_json(dup).unwrap_err().contains("duplicate"));
        let text_idx = r#"{"modality":"text","dim":1,"encoder_name":"x","entries":[
            {"owner_id":"a","item_index":1,"vector":[1.0]}]}"#;
        assert!(VectorStore::from_json(text_idx).unwrap_err().contains("item_index 0"));
    }

    proptest! {
        #[test]
        fn floats_round_trip_bit_exact(
            bits in prop::collection::vec(any::<u32>(), 1..16)
        ) {
            let values: Vec<f32> = bits
                .iter()
                .map(|b| f32::from_bits(*b))
                .map(|x| if x.is_finite() { x } else { 0.5 })
                .collect();
            let mut s = VectorStore::new(Modality::Image, values.len(), "p");
            s.push("o", 0, Vector::new(values.clone())).unwrap();
            let back = VectorStore::from_json(&s.to_json()).unwrap();
            let got: Vec<u32> = back.entries()[0].vector.as_slice().iter().map(|x| x.to_bits()).collect();
            let want: Vec<u32> = values.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(got, want);
        }
    }
}
