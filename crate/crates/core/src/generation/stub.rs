use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{GenParams, RawGeneration};
use crate::corpus::{Attribute, AttributeDictionary};
use crate::embedding::{fnv1a64, SplitMix64};
use crate::prompting::{Message, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    #[default]
    None,
    WrapInFences,
    PrependProse,
    InvalidEnum,
    Empty,
}

impl FromStr for FaultMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FaultMode::None),
            "wrap_in_fences" => Ok(FaultMode::WrapInFences),
            "prepend_prose" => Ok(FaultMode::PrependProse),
            "invalid_enum" => Ok(FaultMode::InvalidEnum),
            "empty" => Ok(FaultMode::Empty),
            other => Err(format!("unknown fault mode `{other}`")),
        }
    }
}

const OPENERS: [&str; 4] = [
    "Gently rinse the {site} wound with clean water and pat it dry.",
    "Clean the {site} area once a day with mild soap and water.",
    "Keep the wound on the {site} clean and dry.",
    "Wash your hands, then clean the {site} wound with saline.",
];

const MIDDLES: [&str; 4] = [
    "Apply a thin layer of antibiotic ointment and cover with a bandage.",
    "Change the dressing every day or whenever it gets wet.",
    "Avoid pressure on the area and keep it elevated when resting.",
    "Leave it open to air if there is no drainage.",
];

const CLOSERS: [&str; 3] = [
    "See a doctor if redness, swelling or fever develops.",
    "It should heal in about 1-2 weeks.",
    "Seek care promptly if the pain gets worse or pus appears.",
];

/// Offline generator: a schema-valid answer chosen by hashing the live user text.
#[derive(Debug, Clone)]
pub struct StubGenerator {
    dict: Arc<AttributeDictionary>,
    fault: FaultMode,
    max_words: usize,
}

impl StubGenerator {
    pub fn new(dict: Arc<AttributeDictionary>, fault: FaultMode, max_words: usize) -> Self {
        Self {
            dict,
            fault,
            max_words,
        }
    }

    pub fn fault(&self) -> FaultMode {
        self.fault
    }

    fn answer(&self, live_text: &str, params: &GenParams) -> String {
        let seed = fnv1a64(live_text.as_bytes()) ^ params.seed.unwrap_or(0);
        let mut rng = SplitMix64::new(seed);
        let mut pick = |n: usize| (rng.next_u64() % n as u64) as usize;

        let mut metadata = Map::new();
        let mut site = "affected".to_string();
        for attr in Attribute::ALL {
            let vocab = self.dict.vocabulary(attr);
            let value = if attr.is_multi_valued() {
                let n = 1 + pick(2);
                let mut labels: Vec<&String> = (0..n).map(|_| &vocab[pick(vocab.len())]).collect();
                labels.sort();
                labels.dedup();
                site = labels[0].replace(['-', '_'], " ");
                json!(labels)
            } else if pick(5) == 0 {
                Value::Null
            } else {
                json!(vocab[pick(vocab.len())])
            };
            metadata.insert(attr.name().to_string(), value);
        }
        if self.fault == FaultMode::InvalidEnum {
            metadata.insert(Attribute::DrainageAmount.name().into(), json!("lots"));
        }

        let response = [
            OPENERS[pick(OPENERS.len())].replace("{site}", &site),
            MIDDLES[pick(MIDDLES.len())].to_string(),
            CLOSERS[pick(CLOSERS.len())].to_string(),
        ]
        .join(" ");
        let response = response
            .split_whitespace()
            .take(self.max_words.max(1))
            .collect::<Vec<_>>()
            .join(" ");

        serde_json::to_string(&json!({ "metadata": metadata, "responses": response }))
            .expect("json serializes")
    }

    pub fn generate(&self, encounter_id: &str, messages: &[Message], params: &GenParams) -> RawGeneration {
        let live = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(Message::text)
            .unwrap_or_default();
        let text = match self.fault {
            FaultMode::Empty => String::new(),
            FaultMode::WrapInFences => format!("```json\n{}\n```", self.answer(&live, params)),
            FaultMode::PrependProse => format!("Here is my assessment of the wound:\n{}", self.answer(&live, params)),
            FaultMode::None | FaultMode::InvalidEnum => self.answer(&live, params),
        };
        let mut provider_meta = Map::new();
        provider_meta.insert("provider".into(), json!("stub"));
        RawGeneration {
            encounter_id: encounter_id.to_string(),
            text,
            latency_ms: 0,
            provider_meta,
            attempt_count: 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub(fault: FaultMode) -> StubGenerator {
        StubGenerator::new(Arc::new(AttributeDictionary::builtin()), fault, 120)
    }

    fn msgs(q: &str) -> Vec<Message> {
        vec![
            Message::system("sys"),
            Message::user(&[], "exemplar"),
            Message::assistant("{}"),
            Message::user(&[], q),
        ]
    }

    #[test]
    fn deterministic_and_schema_valid() {
        let s = stub(FaultMode::None);
        let p = GenParams::default();
        let a = s.generate("e", &msgs("my finger is cut"), &p);
        let b = s.generate("e", &msgs("my finger is cut"), &p);
        assert_eq!(a, b);
        let v: Value = serde_json::from_str(&a.text).unwrap();
        assert_eq!(v.as_object().unwrap().len(), 2);
        let dict = AttributeDictionary::builtin();
        for attr in Attribute::ALL {
            let field = &v["metadata"][attr.name()];
            let values: Vec<&str> = match field {
                Value::Array(a) => a.iter().map(|x| x.as_str().unwrap()).collect(),
                Value::String(s) => vec![s.as_str()],
                Value::Null => vec![],
                other => panic!("{other}"),
            };
            for value in values {
                assert!(dict.contains(attr, value), "{attr}: {value}");
            }
        }
        assert_ne!(a.text, s.generate("e", &msgs("another query"), &p).text);
    }

    #[test]
    fn only_the_live_query_matters() {
        let s = stub(FaultMode::None);
        let p = GenParams::default();
        let mut other = msgs("q");
        other[1] = Message::user(&[], "different exemplar");
        assert_eq!(s.generate("e", &msgs("q"), &p).text, s.generate("e", &other, &p).text);
    }

    #[test]
    fn fault_modes() {
        let p = GenParams::default();
        let m = msgs("q");
        assert!(stub(FaultMode::WrapInFences).generate("e", &m, &p).text.starts_with("```json\n"));
        assert!(stub(FaultMode::PrependProse).generate("e", &m, &p).text.starts_with("Here is"));
        assert_eq!(stub(FaultMode::Empty).generate("e", &m, &p).text, "");
        let bad: Value = serde_json::from_str(&stub(FaultMode::InvalidEnum).generate("e", &m, &p).text).unwrap();
        assert_eq!(bad["metadata"]["drainage_amount"], "lots");
        assert_eq!("wrap_in_fences".parse::<FaultMode>().unwrap(), FaultMode::WrapInFences);
        assert!("nope".parse::<FaultMode>().is_err());
    }
}
