//! Encounter corpus: loading, canonicalization of gold labels and summary statistics.
//!
//! The on-disk format is JSON lines, one encounter per line:
//!
//! ```text
//! {"encounter_id": "...", "images": ["rel/path.jpg", ...],
//!  "query_title_en": "...", "query_content_en": "...",
//!  "query_title_zh": "...", "query_content_zh": "...",
//!  "gold_attributes": {...} | null,
//!  "reference_responses_en": [...], "reference_responses_zh": [...]}
//! ```
//!
//! Image paths are resolved against an image root. Malformed lines are
//! collected in a [`LoadReport`] instead of aborting the load; a missing file
//! or a duplicated `encounter_id` is fatal.

pub mod convert;
pub mod dictionary;
pub mod stats;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use dictionary::{
    canonicalize_attributes, raw_attributes_from_json, Attribute, AttributeDictionary,
    Correction, DictionaryError, Outcome, RawAttributes, WoundAttributes,
};
pub use stats::{corpus_stats, CorpusStats, LabelCount};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus file {path} could not be read: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate encounter_id `{id}` (lines {first} and {second})")]
    DuplicateId { id: String, first: usize, second: usize },
    #[error("unknown split `{0}`")]
    UnknownSplit(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" | "dev" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(CorpusError::UnknownSplit(other.to_string())),
        }
    }
}

/// A wound photograph belonging to an encounter. The image is never decoded here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    /// Path as written in the corpus file.
    pub rel_path: String,
    /// Path resolved against the image root.
    pub path: PathBuf,
    pub byte_length: u64,
    pub width_px: Option<u32>,
    pub height_px: Option<u32>,
}

impl ImageRef {
    pub fn resolve(image_root: &Path, rel_path: &str) -> Result<Self, String> {
        let path = image_root.join(rel_path);
        let meta = std::fs::metadata(&path)
            .map_err(|e| format!("image {} not readable: {e}", path.display()))?;
        if !meta.is_file() || meta.len() == 0 {
            return Err(format!("image {} is empty or not a file", path.display()));
        }
        Ok(Self {
            rel_path: rel_path.to_string(),
            path,
            byte_length: meta.len(),
            width_px: None,
            height_px: None,
        })
    }
}

/// One dataset instance: the image set and the bilingual query, plus gold data on labeled splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Encounter {
    pub encounter_id: String,
    pub images: Vec<ImageRef>,
    pub query_title_en: String,
    pub query_content_en: String,
    pub query_title_zh: String,
    pub query_content_zh: String,
    pub gold_attributes: Option<WoundAttributes>,
    pub reference_responses_en: Vec<String>,
    pub reference_responses_zh: Vec<String>,
}

impl Encounter {
    /// English title and content joined by a single space.
    pub fn query_en(&self) -> String {
        join_nonempty(&self.query_title_en, &self.query_content_en)
    }

    pub fn query_zh(&self) -> String {
        join_nonempty(&self.query_title_zh, &self.query_content_zh)
    }

    pub fn to_record(&self) -> EncounterRecord {
        EncounterRecord {
            encounter_id: self.encounter_id.clone(),
            images: Some(self.images.iter().map(|i| i.rel_path.clone()).collect()),
            query_title_en: self.query_title_en.clone(),
            query_content_en: self.query_content_en.clone(),
            query_title_zh: self.query_title_zh.clone(),
            query_content_zh: self.query_content_zh.clone(),
            gold_attributes: self
                .gold_attributes
                .as_ref()
                .map(|g| serde_json::to_value(g).expect("attributes serialize")),
            reference_responses_en: self.reference_responses_en.clone(),
            reference_responses_zh: self.reference_responses_zh.clone(),
        }
    }
}

fn join_nonempty(a: &str, b: &str) -> String {
    match (a.trim().is_empty(), b.trim().is_empty()) {
        (true, _) => b.trim().to_string(),
        (_, true) => a.trim().to_string(),
        _ => format!("{} {}", a.trim(), b.trim()),
    }
}

/// The JSON-lines wire form of an encounter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub encounter_id: String,
    #[serde(default)]
    pub images: Option<Vec<String>>,
    #[serde(default)]
    pub query_title_en: String,
    #[serde(default)]
    pub query_content_en: String,
    #[serde(default)]
    pub query_title_zh: String,
    #[serde(default)]
    pub query_content_zh: String,
    #[serde(default)]
    pub gold_attributes: Option<Value>,
    #[serde(default)]
    pub reference_responses_en: Vec<String>,
    #[serde(default)]
    pub reference_responses_zh: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordError {
    pub line: usize,
    pub encounter_id: Option<String>,
    pub reason: String,
}

/// Everything noteworthy that happened during a load, short of a fatal error.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub errors: Vec<RecordError>,
    /// Gold-label corrections, keyed by encounter.
    pub corrections: Vec<(String, Correction)>,
    /// Unknown or non-textual gold keys, keyed by encounter.
    pub ignored_fields: Vec<(String, String, String)>,
}

impl LoadReport {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// An immutable list of encounters of one split.
#[derive(Debug, Clone)]
pub struct Corpus {
    split: Split,
    encounters: Vec<Encounter>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Build a corpus from encounters, rejecting duplicated ids.
    pub fn new(split: Split, encounters: Vec<Encounter>) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(encounters.len());
        for (i, enc) in encounters.iter().enumerate() {
            if let Some(prev) = by_id.insert(enc.encounter_id.clone(), i) {
                return Err(CorpusError::DuplicateId {
                    id: enc.encounter_id.clone(),
                    first: prev + 1,
                    second: i + 1,
                });
            }
        }
        Ok(Self {
            split,
            encounters,
            by_id,
        })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn encounters(&self) -> &[Encounter] {
        &self.encounters
    }

    pub fn get(&self, id: &str) -> Option<&Encounter> {
        self.by_id.get(id).map(|&i| &self.encounters[i])
    }

    pub fn len(&self) -> usize {
        self.encounters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encounters.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Encounter> {
        self.encounters.iter()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for enc in &self.encounters {
            out.push_str(&serde_json::to_string(&enc.to_record()).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Encounter;
    type IntoIter = std::slice::Iter<'a, Encounter>;

    fn into_iter(self) -> Self::IntoIter {
        self.encounters.iter()
    }
}

/// Load one split from a JSON-lines corpus file.
pub fn load_corpus(
    path: &Path,
    split: Split,
    image_root: &Path,
    dict: &AttributeDictionary,
) -> Result<(Corpus, LoadReport), CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, split, image_root, dict)
}

pub fn parse_corpus(
    text: &str,
    split: Split,
    image_root: &Path,
    dict: &AttributeDictionary,
) -> Result<(Corpus, LoadReport), CorpusError> {
    let mut report = LoadReport::default();
    let mut encounters = Vec::new();
    let mut lines_by_id: HashMap<String, usize> = HashMap::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(line, image_root, dict, &mut report) {
            Ok(enc) => {
                if let Some(first) = lines_by_id.insert(enc.encounter_id.clone(), line_no) {
                    return Err(CorpusError::DuplicateId {
                        id: enc.encounter_id,
                        first,
                        second: line_no,
                    });
                }
                encounters.push(enc);
            }
            Err((encounter_id, reason)) => report.errors.push(RecordError {
                line: line_no,
                encounter_id,
                reason,
            }),
        }
    }

    let corpus = Corpus::new(split, encounters)?;
    Ok((corpus, report))
}

fn parse_record(
    line: &str,
    image_root: &Path,
    dict: &AttributeDictionary,
    report: &mut LoadReport,
) -> Result<Encounter, (Option<String>, String)> {
    let value: Value =
        serde_json::from_str(line).map_err(|e| (None, format!("invalid JSON: {e}")))?;
    let id_hint = value
        .get("encounter_id")
        .and_then(Value::as_str)
        .map(str::to_string);
    let record: EncounterRecord =
        serde_json::from_value(value).map_err(|e| (id_hint.clone(), format!("bad record: {e}")))?;

    let id = record.encounter_id.trim().to_string();
    if id.is_empty() {
        return Err((None, "empty encounter_id".into()));
    }
    let fail = |reason: String| (Some(id.clone()), reason);

    let rel_paths = record.images.ok_or_else(|| fail("missing images field".into()))?;
    if rel_paths.is_empty() {
        return Err(fail("images list is empty".into()));
    }
    let images = rel_paths
        .iter()
        .map(|p| ImageRef::resolve(image_root, p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;

    let gold_attributes = match record.gold_attributes {
        None | Some(Value::Null) => None,
        Some(v) => {
            if !v.is_object() {
                return Err(fail("gold_attributes is not an object".into()));
            }
            let (raw, ignored) = raw_attributes_from_json(&v);
            for (k, val) in ignored {
                report.ignored_fields.push((id.clone(), k, val));
            }
            let (attrs, corrections) = canonicalize_attributes(&raw, dict);
            report
                .corrections
                .extend(corrections.into_iter().map(|c| (id.clone(), c)));
            Some(attrs)
        }
    };

    Ok(Encounter {
        encounter_id: id,
        images,
        query_title_en: record.query_title_en,
        query_content_en: record.query_content_en,
        query_title_zh: record.query_title_zh,
        query_content_zh: record.query_content_zh,
        gold_attributes,
        reference_responses_en: record.reference_responses_en,
        reference_responses_zh: record.reference_responses_zh,
    })
}
