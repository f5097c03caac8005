//! Conversion from the shared-task release layout to the corpus JSON-lines format.
//!
//! The release ships one JSON array per split. Each element carries the
//! encounter id, a list of image file names, the bilingual query, a list of
//! `responses` objects (`content_en` / `content_zh`) and the gold attributes as
//! top-level keys. Field names are matched leniently because releases differ
//! in small ways; anything unrecognized is left out.

use serde_json::{Map, Value};

use super::{Attribute, EncounterRecord};

#[derive(Debug, thiserror::Error)]
pub enum ConvertError {
    #[error("release file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("expected a JSON array of encounters")]
    NotAnArray,
    #[error("element {0} has no encounter_id")]
    MissingId(usize),
}

const IMAGE_KEYS: [&str; 3] = ["image_ids", "images", "image_files"];

/// Convert a release file (JSON array or JSON lines) into corpus records.
///
/// `image_prefix` is prepended to every image name, e.g. `images_train/`.
pub fn convert_release(text: &str, image_prefix: &str) -> Result<Vec<EncounterRecord>, ConvertError> {
    let items: Vec<Value> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(items)) => items,
        Ok(_) => return Err(ConvertError::NotAnArray),
        Err(_) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?,
    };
    items
        .iter()
        .enumerate()
        .map(|(i, item)| convert_item(i, item, image_prefix))
        .collect()
}

fn convert_item(idx: usize, item: &Value, image_prefix: &str) -> Result<EncounterRecord, ConvertError> {
    let obj = item.as_object().ok_or(ConvertError::NotAnArray)?;
    let id = str_field(obj, "encounter_id").ok_or(ConvertError::MissingId(idx))?;

    let images = IMAGE_KEYS
        .iter()
        .find_map(|k| obj.get(*k).and_then(Value::as_array))
        .map(|arr| {
            arr.iter()
                .filter_map(Value::as_str)
                .map(|name| format!("{image_prefix}{name}"))
                .collect()
        });

    let mut en = Vec::new();
    let mut zh = Vec::new();
    if let Some(resps) = obj.get("responses").and_then(Value::as_array) {
        for r in resps {
            if let Some(s) = r.get("content_en").and_then(Value::as_str) {
                en.push(s.to_string());
            }
            if let Some(s) = r.get("content_zh").and_then(Value::as_str) {
                zh.push(s.to_string());
            }
        }
    }

    let mut gold = Map::new();
    for (key, value) in obj {
        if let Ok(attr) = key.parse::<Attribute>() {
            gold.insert(attr.name().to_string(), value.clone());
        }
    }

    Ok(EncounterRecord {
        encounter_id: id,
        images,
        query_title_en: str_field(obj, "query_title_en").unwrap_or_default(),
        query_content_en: str_field(obj, "query_content_en").unwrap_or_default(),
        query_title_zh: str_field(obj, "query_title_zh").unwrap_or_default(),
        query_content_zh: str_field(obj, "query_content_zh").unwrap_or_default(),
        gold_attributes: (!gold.is_empty()).then_some(Value::Object(gold)),
        reference_responses_en: en,
        reference_responses_zh: zh,
    })
}

fn str_field(obj: &Map<String, Value>, key: &str) -> Option<String> {
    obj.get(key).and_then(Value::as_str).map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converts_release_array() {
        let text = r#"[{"encounter_id":"ENC001","image_ids":["IMG1.jpg","IMG2.jpg"],
            "query_title_en":"Cut","query_content_en":"Finger cut.","query_title_zh":"割伤",
            "responses":[{"author_id":"a","content_en":"Wash it.","content_zh":"洗。"}],
            "anatomic_locations":["finger"],"wound_type":"traumatic","infection_status":"not_infected"}]"#;
        let recs = convert_release(text, "images_train/").unwrap();
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.images.as_deref().unwrap(), ["images_train/IMG1.jpg", "images_train/IMG2.jpg"]);
        assert_eq!(r.reference_responses_en, ["Wash it."]);
        let gold = r.gold_attributes.as_ref().unwrap();
        assert_eq!(gold["infection"], "not_infected");
        assert_eq!(gold["anatomic_locations"][0], "finger");
    }

    #[test]
    fn missing_id_is_an_error() {
        assert!(matches!(
            convert_release(r#"[{"image_ids":[]}]"#, ""),
            Err(ConvertError::MissingId(0))
        ));
    }
}
