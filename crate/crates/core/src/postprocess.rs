//! Turning raw model text into structured predictions.
//!
//! Raw text goes through three steps: fence lines are removed and the first
//! balanced JSON object is cut out ([`extract_json`]), the object is checked
//! for the `metadata`/`responses` contract ([`parse_output`]), and metadata
//! values are canonicalized against the dictionary. Nothing here fails on bad
//! model output; the outcome is recorded in [`ParseStatus`].

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::corpus::{
    canonicalize_attributes, raw_attributes_from_json, AttributeDictionary, Outcome, WoundAttributes,
};
use crate::evaluation::tokenize::is_cjk;
use crate::generation::RawGeneration;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no JSON object")]
pub struct NoJsonObject;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Recovered,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardedField {
    pub field: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredPrediction {
    pub encounter_id: String,
    #[serde(rename = "metadata")]
    pub attributes: WoundAttributes,
    #[serde(rename = "responses")]
    pub response_en: String,
    pub parse_status: ParseStatus,
    pub discarded_fields: Vec<DiscardedField>,
    /// Metadata strings exactly as the model produced them, by attribute name.
    #[serde(default)]
    pub raw_metadata: BTreeMap<String, Vec<String>>,
}

impl StructuredPrediction {
    pub fn failed(encounter_id: &str) -> Self {
        Self {
            encounter_id: encounter_id.to_string(),
            attributes: WoundAttributes::default(),
            response_en: String::new(),
            parse_status: ParseStatus::Failed,
            discarded_fields: Vec::new(),
            raw_metadata: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParseOptions {
    pub max_response_words: usize,
    /// Keys that hold the English text when `responses` is an object.
    pub english_keys: Vec<String>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self {
            max_response_words: 120,
            english_keys: ["en", "english", "content_en", "response_en", "en_us", "text"]
                .map(String::from)
                .to_vec(),
        }
    }
}

fn is_fence_line(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// The first balanced `{...}` of `raw` after fence lines are removed.
pub fn extract_json(raw: &str) -> Result<String, NoJsonObject> {
    let text: String = raw
        .split_inclusive('\n')
        .filter(|l| !is_fence_line(l))
        .collect();
    let start = text.find('{').ok_or(NoJsonObject)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(text[start..=start + i].to_string());
                }
            }
            _ => {}
        }
    }
    Err(NoJsonObject)
}

fn has_cjk(s: &str) -> bool {
    s.chars().any(is_cjk)
}

fn english_from_object(obj: &serde_json::Map<String, Value>, opts: &ParseOptions) -> Option<String> {
    opts.english_keys.iter().find_map(|k| {
        obj.iter()
            .find(|(key, _)| key.eq_ignore_ascii_case(k))
            .and_then(|(_, v)| v.as_str())
            .map(str::to_string)
    })
}

/// Returns the English text and whether the value had to be unwrapped.
fn english_response(value: &Value, opts: &ParseOptions) -> Option<(String, bool)> {
    match value {
        Value::String(s) => Some((s.clone(), false)),
        Value::Object(obj) => english_from_object(obj, opts).map(|s| (s, true)),
        Value::Array(items) => {
            let strings: Vec<&str> = items.iter().filter_map(Value::as_str).collect();
            strings
                .iter()
                .find(|s| !has_cjk(s))
                .or_else(|| strings.first())
                .map(|s| s.to_string())
                .or_else(|| {
                    items
                        .iter()
                        .filter_map(Value::as_object)
                        .find_map(|o| english_from_object(o, opts))
                })
                .map(|s| (s, true))
        }
        _ => None,
    }
}

fn truncate_words(s: &str, max: usize) -> Option<String> {
    let words: Vec<&str> = s.split_whitespace().collect();
    (words.len() > max).then(|| words[..max].join(" "))
}

/// Validate an extracted JSON object against the two-key contract.
pub fn parse_output(
    text: &str,
    dict: &AttributeDictionary,
    encounter_id: &str,
    opts: &ParseOptions,
) -> StructuredPrediction {
    let Ok(Value::Object(top)) = serde_json::from_str::<Value>(text) else {
        return StructuredPrediction::failed(encounter_id);
    };
    let mut recovered = false;
    let mut discarded = Vec::new();

    for (key, value) in &top {
        if key != "metadata" && key != "responses" {
            recovered = true;
            discarded.push(DiscardedField {
                field: key.clone(),
                value: value.to_string(),
            });
        }
    }

    let Some((response, unwrapped)) = top.get("responses").and_then(|v| english_response(v, opts)) else {
        return StructuredPrediction::failed(encounter_id);
    };
    recovered |= unwrapped;
    let response = match truncate_words(&response, opts.max_response_words) {
        Some(cut) => {
            recovered = true;
            cut
        }
        None => response.trim().to_string(),
    };
    if response.is_empty() {
        return StructuredPrediction::failed(encounter_id);
    }

    let mut raw_metadata = BTreeMap::new();
    let attributes = match top.get("metadata") {
        None | Some(Value::Null) => {
            recovered = true;
            WoundAttributes::default()
        }
        Some(meta) => {
            if !meta.is_object() {
                recovered = true;
            }
            let (raw, rejected) = raw_attributes_from_json(meta);
            for (field, value) in rejected {
                discarded.push(DiscardedField { field, value });
            }
            for (attr, values) in &raw {
                raw_metadata.insert(attr.name().to_string(), values.clone());
            }
            let (attrs, corrections) = canonicalize_attributes(&raw, dict);
            for c in corrections {
                if c.outcome == Outcome::Discarded {
                    discarded.push(DiscardedField {
                        field: c.attribute.name().to_string(),
                        value: c.surface,
                    });
                }
            }
            attrs
        }
    };

    StructuredPrediction {
        encounter_id: encounter_id.to_string(),
        attributes,
        response_en: response,
        parse_status: if recovered { ParseStatus::Recovered } else { ParseStatus::Ok },
        discarded_fields: discarded,
        raw_metadata,
    }
}

/// Extraction followed by parsing. Text outside the JSON object makes the
/// result `recovered`.
pub fn normalize_generation(
    raw_text: &str,
    dict: &AttributeDictionary,
    encounter_id: &str,
    opts: &ParseOptions,
) -> StructuredPrediction {
    let Ok(json) = extract_json(raw_text) else {
        return StructuredPrediction::failed(encounter_id);
    };
    let mut pred = parse_output(&json, dict, encounter_id, opts);
    if pred.parse_status == ParseStatus::Ok && json != raw_text.trim() {
        pred.parse_status = ParseStatus::Recovered;
    }
    pred
}

pub fn postprocess(raw: &RawGeneration, dict: &AttributeDictionary, opts: &ParseOptions) -> StructuredPrediction {
    normalize_generation(&raw.text, dict, &raw.encounter_id, opts)
}

/// One record per encounter, sorted by id. Later predictions replace earlier ones.
pub fn merge_predictions(preds: Vec<StructuredPrediction>) -> Vec<StructuredPrediction> {
    let mut by_id = BTreeMap::new();
    for p in preds {
        let id = p.encounter_id.clone();
        if by_id.insert(id.clone(), p).is_some() {
            warn!(encounter_id = %id, "duplicate prediction, keeping the last one");
        }
    }
    by_id.into_values().collect()
}

pub fn predictions_to_jsonl(preds: &[StructuredPrediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("prediction serializes"));
        out.push('\n');
    }
    out
}

pub fn write_predictions(path: &Path, preds: &[StructuredPrediction]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(predictions_to_jsonl(preds).as_bytes())?;
    f.flush()
}

#[derive(Debug, thiserror::Error)]
pub enum PredictionsError {
    #[error("predictions file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("predictions file line {line}: {reason}")]
    Record { line: usize, reason: String },
}

pub fn parse_predictions(text: &str) -> Result<Vec<StructuredPrediction>, PredictionsError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PredictionsError::Record {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_predictions(path: &Path) -> Result<Vec<StructuredPrediction>, PredictionsError> {
    let text = std::fs::read_to_string(path).map_err(|source| PredictionsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_predictions(&text)
}
