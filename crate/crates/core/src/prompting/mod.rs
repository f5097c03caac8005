//! Message assembly for zero-shot, few-shot and retrieval-augmented prompts.
//!
//! Every prompt has the same skeleton: one system message, then zero or more
//! exemplar pairs (a user turn with the exemplar's images and query, and an
//! assistant turn with its gold output as two-key JSON), then the live user
//! turn. Assembly is a pure function of its inputs.

mod budget;

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

pub use budget::{check_budget, estimate_tokens, BudgetReport, TokenBudget};

use crate::corpus::{AttributeDictionary, Corpus, Encounter, ImageRef};
use crate::retrieval::ExemplarHit;

const DEFAULT_SYSTEM: &str = include_str!("../../data/system_prompt.txt");
const DEFAULT_USER: &str = include_str!("../../data/user_prompt.txt");
const DEFAULT_SCHEMA: &str = include_str!("../../data/output_schema.txt");

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("exemplar `{0}` has no gold attributes or reference response")]
    MissingGold(String),
    #[error("retrieved exemplar `{0}` is not in the exemplar corpus")]
    UnresolvedHit(String),
    #[error("query over budget: {estimated} tokens for a budget of {budget}")]
    QueryOverBudget { estimated: usize, budget: usize },
    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),
    #[error("failed to read template {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    Image { image: ImageRef },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            parts: vec![Part::Text { text: text.into() }],
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            parts: vec![Part::Text { text: text.into() }],
        }
    }

    pub fn user(images: &[ImageRef], text: impl Into<String>) -> Self {
        let mut parts: Vec<Part> = images
            .iter()
            .map(|image| Part::Image {
                image: image.clone(),
            })
            .collect();
        parts.push(Part::Text { text: text.into() });
        Self {
            role: Role::User,
            parts,
        }
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.parts.iter().filter_map(|p| match p {
            Part::Image { image } => Some(image),
            Part::Text { .. } => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
    Rag,
}

/// Template texts with `{query}`, `{schema}`, `{dictionary}` and `{max_words}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub system: String,
    pub user: String,
    pub schema: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            system: DEFAULT_SYSTEM.to_string(),
            user: DEFAULT_USER.to_string(),
            schema: DEFAULT_SCHEMA.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Defaults, with any of the given files replacing the corresponding template.
    pub fn load(
        system: Option<&Path>,
        user: Option<&Path>,
        schema: Option<&Path>,
    ) -> Result<Self, PromptError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|source| PromptError::Template {
                path: p.display().to_string(),
                source,
            })
        };
        let mut t = Self::default();
        if let Some(p) = system {
            t.system = read(p)?;
        }
        if let Some(p) = user {
            t.user = read(p)?;
        }
        if let Some(p) = schema {
            t.schema = read(p)?;
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub mode: PromptMode,
    pub templates: PromptTemplates,
    pub max_response_words: usize,
    pub fixed_exemplar_ids: Vec<String>,
    pub budget: TokenBudget,
    /// Append the Chinese title and content to user turns.
    pub include_zh: bool,
    /// Attach exemplar images to exemplar user turns.
    pub exemplar_images: bool,
}

impl PromptSpec {
    pub fn new(mode: PromptMode) -> Self {
        Self {
            mode,
            templates: PromptTemplates::default(),
            max_response_words: 120,
            fixed_exemplar_ids: Vec::new(),
            budget: TokenBudget::default(),
            include_zh: false,
            exemplar_images: true,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.max_response_words == 0 {
            return Err(PromptError::InvalidSpec("max_response_words must be positive".into()));
        }
        let few_shot = self.mode == PromptMode::FewShot;
        if few_shot == self.fixed_exemplar_ids.is_empty() {
            return Err(PromptError::InvalidSpec(
                "fixed_exemplar_ids must be given for few-shot prompts and only for them".into(),
            ));
        }
        self.budget.validate()
    }

    pub fn render_system(&self, dict: &AttributeDictionary) -> String {
        self.templates
            .system
            .replace("{schema}", self.templates.schema.trim_end())
            .replace("{dictionary}", &dict.render_labels())
            .replace("{max_words}", &self.max_response_words.to_string())
            .trim_end()
            .to_string()
    }

    pub fn render_query(&self, enc: &Encounter) -> String {
        let mut query = [enc.query_title_en.trim(), enc.query_content_en.trim()]
            .iter()
            .filter(|s| !s.is_empty())
            .copied()
            .collect::<Vec<_>>()
            .join("\n");
        if self.include_zh {
            let zh = enc.query_zh();
            if !zh.is_empty() {
                query.push('\n');
                query.push_str(&zh);
            }
        }
        self.templates
            .user
            .replace("{query}", &query)
            .replace("{max_words}", &self.max_response_words.to_string())
            .trim_end()
            .to_string()
    }
}

/// The gold output of an exemplar as the JSON object the model is asked to produce.
/// Keys are sorted.
pub fn gold_output_json(enc: &Encounter) -> Result<String, PromptError> {
    let missing = || PromptError::MissingGold(enc.encounter_id.clone());
    let attrs = enc.gold_attributes.as_ref().ok_or_else(missing)?;
    let response = enc.reference_responses_en.first().ok_or_else(missing)?;
    let value = json!({
        "metadata": serde_json::to_value(attrs).expect("attributes serialize"),
        "responses": response,
    });
    Ok(serde_json::to_string(&value).expect("json serializes"))
}

fn exemplar_pair(ex: &Encounter, spec: &PromptSpec) -> Result<[Message; 2], PromptError> {
    let answer = gold_output_json(ex)?;
    let images: &[ImageRef] = if spec.exemplar_images { &ex.images } else { &[] };
    Ok([Message::user(images, spec.render_query(ex)), Message::assistant(answer)])
}

fn assemble<'a>(
    enc: &Encounter,
    exemplars: impl IntoIterator<Item = &'a Encounter>,
    spec: &PromptSpec,
    dict: &AttributeDictionary,
) -> Result<Vec<Message>, PromptError> {
    let mut messages = vec![Message::system(spec.render_system(dict))];
    for ex in exemplars {
        messages.extend(exemplar_pair(ex, spec)?);
    }
    messages.push(Message::user(&enc.images, spec.render_query(enc)));
    Ok(messages)
}

/// System instruction plus the live query with all of its images.
pub fn build_zero_shot(enc: &Encounter, spec: &PromptSpec, dict: &AttributeDictionary) -> Vec<Message> {
    assemble(enc, std::iter::empty(), spec, dict).expect("no exemplars, nothing can fail")
}

/// Fixed exemplars, in the given order, ahead of the live query.
pub fn build_few_shot(
    enc: &Encounter,
    exemplars: &[&Encounter],
    spec: &PromptSpec,
    dict: &AttributeDictionary,
) -> Result<Vec<Message>, PromptError> {
    assemble(enc, exemplars.iter().copied(), spec, dict)
}

/// Retrieved exemplars, best fused score first, ahead of the live query.
pub fn build_rag_prompt(
    enc: &Encounter,
    hits: &[ExemplarHit],
    exemplar_corpus: &Corpus,
    spec: &PromptSpec,
    dict: &AttributeDictionary,
) -> Result<Vec<Message>, PromptError> {
    if hits.is_empty() {
        warn!(encounter_id = %enc.encounter_id, "no retrieved exemplars, prompt degenerates to zero-shot");
    }
    let mut ordered: Vec<&ExemplarHit> = hits.iter().collect();
    ordered.sort_by(|a, b| {
        b.fused_score
            .total_cmp(&a.fused_score)
            .then_with(|| a.owner_id.cmp(&b.owner_id))
    });
    let exemplars = ordered
        .iter()
        .map(|h| {
            exemplar_corpus
                .get(&h.owner_id)
                .ok_or_else(|| PromptError::UnresolvedHit(h.owner_id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    assemble(enc, exemplars, spec, dict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, WoundAttributes};
    use std::path::PathBuf;

    fn image(name: &str) -> ImageRef {
        ImageRef {
            rel_path: name.into(),
            path: PathBuf::from(name),
            byte_length: 1,
            width_px: None,
            height_px: None,
        }
    }

    pub(crate) fn encounter(id: &str, n_images: usize, gold: bool) -> Encounter {
        Encounter {
            encounter_id: id.into(),
            images: (0..n_images).map(|i| image(&format!("{id}_{i}.jpg"))).collect(),
            query_title_en: format!("Question {id}"),
            query_content_en: "My finger was cut yesterday. Is it healing?".into(),
            query_title_zh: "问题".into(),
            query_content_zh: "手指割伤".into(),
            gold_attributes: gold.then(|| WoundAttributes {
                wound_type: Some("traumatic".into()),
                infection: Some("not_infected".into()),
                anatomic_locations: ["finger".to_string()].into(),
                ..Default::default()
            }),
            reference_responses_en: if gold { vec![format!("Keep {id} clean.")] } else { vec![] },
            reference_responses_zh: vec![],
        }
    }

    fn dict() -> AttributeDictionary {
        AttributeDictionary::builtin()
    }

    #[test]
    fn zero_shot_structure() {
        let spec = PromptSpec::new(PromptMode::ZeroShot);
        let m = build_zero_shot(&encounter("q", 1, false), &spec, &dict());
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].role, Role::System);
        assert!(m[0].images().next().is_none());
        assert_eq!(m[1].images().count(), 1);
        assert_eq!(m[1].parts.len(), 2);
        let system = m[0].text();
        assert!(system.contains("stage_II") && system.contains("120 words"));
        assert!(!system.contains("{dictionary}") && !system.contains("{schema}"));
    }

    #[test]
    fn four_images_are_all_attached() {
        let spec = PromptSpec::new(PromptMode::ZeroShot);
        let m = build_zero_shot(&encounter("q", 4, false), &spec, &dict());
        assert_eq!(m[1].images().count(), 4);
    }

    #[test]
    fn zero_shot_is_deterministic() {
        let spec = PromptSpec::new(PromptMode::ZeroShot);
        let e = encounter("q", 2, false);
        let a = serde_json::to_string(&build_zero_shot(&e, &spec, &dict())).unwrap();
        let b = serde_json::to_string(&build_zero_shot(&e, &spec, &dict())).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn few_shot_structure_and_assistant_json() {
        let mut spec = PromptSpec::new(PromptMode::FewShot);
        spec.fixed_exemplar_ids = vec!["a".into(), "b".into()];
        let (a, b) = (encounter("a", 2, true), encounter("b", 1, true));
        let m = build_few_shot(&encounter("q", 1, false), &[&a, &b], &spec, &dict()).unwrap();
        assert_eq!(m.len(), 6);
        let roles: Vec<Role> = m.iter().map(|x| x.role).collect();
        use Role::*;
        assert_eq!(roles, [System, User, Assistant, User, Assistant, User]);
        assert_eq!(m[1].images().count(), 2);
        for turn in [&m[2], &m[4]] {
            let v: serde_json::Value = serde_json::from_str(&turn.text()).unwrap();
            let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
            assert_eq!(keys, ["metadata", "responses"]);
            assert!(v["metadata"].get("wound_type").is_some());
            assert!(turn.images().next().is_none());
        }
    }

    #[test]
    fn few_shot_without_exemplars_equals_zero_shot() {
        let spec = PromptSpec::new(PromptMode::ZeroShot);
        let q = encounter("q", 3, false);
        assert_eq!(build_few_shot(&q, &[], &spec, &dict()).unwrap(), build_zero_shot(&q, &spec, &dict()));
    }

    #[test]
    fn few_shot_requires_gold() {
        let spec = PromptSpec::new(PromptMode::FewShot);
        let bad = encounter("x", 1, false);
        let err = build_few_shot(&encounter("q", 1, false), &[&bad], &spec, &dict()).unwrap_err();
        assert!(matches!(err, PromptError::MissingGold(id) if id == "x"));
    }

    #[test]
    fn rag_orders_exemplars_by_descending_score() {
        let spec = PromptSpec::new(PromptMode::Rag);
        let corpus = Corpus::new(Split::Train, vec![encounter("A", 1, true), encounter("B", 1, true)]).unwrap();
        let hit = |id: &str, s: f64| ExemplarHit {
            owner_id: id.into(),
            text_score: s,
            image_score: None,
            fused_score: s,
        };
        let m = build_rag_prompt(
            &encounter("q", 1, false),
            &[hit("A", 0.7), hit("B", 0.9)],
            &corpus,
            &spec,
            &dict(),
        )
        .unwrap();
        assert_eq!(m.len(), 6);
        assert!(m[1].text().contains("Question B"));
        assert!(m[3].text().contains("Question A"));
        assert!(m[5].text().contains("Question q"));
    }

    #[test]
    fn rag_with_no_hits_is_zero_shot_and_unknown_hit_fails() {
        let spec = PromptSpec::new(PromptMode::Rag);
        let corpus = Corpus::new(Split::Train, vec![encounter("A", 1, true)]).unwrap();
        let q = encounter("q", 1, false);
        assert_eq!(
            build_rag_prompt(&q, &[], &corpus, &spec, &dict()).unwrap(),
            build_zero_shot(&q, &spec, &dict())
        );
        let ghost = ExemplarHit {
            owner_id: "nope".into(),
            text_score: 1.0,
            image_score: None,
            fused_score: 1.0,
        };
        assert!(matches!(
            build_rag_prompt(&q, &[ghost], &corpus, &spec, &dict()),
            Err(PromptError::UnresolvedHit(_))
        ));
    }

    #[test]
    fn text_only_exemplars_and_chinese_flag() {
        let mut spec = PromptSpec::new(PromptMode::Rag);
        spec.exemplar_images = false;
        spec.include_zh = true;
        let corpus = Corpus::new(Split::Train, vec![encounter("A", 3, true)]).unwrap();
        let hit = ExemplarHit {
            owner_id: "A".into(),
            text_score: 0.5,
            image_score: None,
            fused_score: 0.5,
        };
        let m = build_rag_prompt(&encounter("q", 2, false), &[hit], &corpus, &spec, &dict()).unwrap();
        assert_eq!(m[1].images().count(), 0);
        assert_eq!(m[3].images().count(), 2);
        assert!(m[3].text().contains("手指割伤"));
    }

    #[test]
    fn spec_validation() {
        let mut spec = PromptSpec::new(PromptMode::FewShot);
        assert!(spec.validate().is_err());
        spec.fixed_exemplar_ids = vec!["a".into()];
        assert!(spec.validate().is_ok());
        spec.mode = PromptMode::ZeroShot;
        assert!(spec.validate().is_err());
        let mut z = PromptSpec::new(PromptMode::ZeroShot);
        z.max_response_words = 0;
        assert!(z.validate().is_err());
    }
}
