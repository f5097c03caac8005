//! Gold-free error analysis of a prediction set.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::corpus::stats::label_distribution_of;
use crate::corpus::{Attribute, AttributeDictionary, Corpus, LabelCount};
use crate::evaluation::tokenize::{is_cjk, is_punctuation, tokenize, word_count, Lang};
use crate::postprocess::{ParseStatus, StructuredPrediction};

const DEFAULT_LEXICONS: &str = include_str!("../data/lexicons.json");

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("lexicon file {path}: {reason}")]
    Lexicon { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentSpec {
    pub name: String,
    pub ask_keywords: Vec<String>,
    pub answer_patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconFile {
    pub stock_phrases: Vec<String>,
    pub overlap_threshold: f64,
    pub stopwords: Vec<String>,
    pub intents: Vec<IntentSpec>,
    pub infection_cues: Vec<String>,
    pub infection_assertion: String,
    pub hedges: Vec<String>,
    pub non_assertions: Vec<String>,
}

struct CompiledIntent {
    name: String,
    ask_keywords: Vec<String>,
    answers: Vec<Regex>,
}

/// Lexicons with their patterns compiled (case-insensitive).
pub struct Lexicons {
    pub source: LexiconFile,
    stopwords: HashSet<String>,
    intents: Vec<CompiledIntent>,
    cues: Vec<Regex>,
    assertion: Regex,
    hedges: Vec<Regex>,
    non_assertions: Vec<Regex>,
}

fn compile(p: &str) -> Result<Regex, String> {
    RegexBuilder::new(p)
        .case_insensitive(true)
        .build()
        .map_err(|e| format!("pattern `{p}`: {e}"))
}

fn compile_all(ps: &[String]) -> Result<Vec<Regex>, String> {
    ps.iter().map(|p| compile(p)).collect()
}

impl Lexicons {
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_LEXICONS).expect("built-in lexicons are valid")
    }

    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        let err = |reason: String| AnalysisError::Lexicon {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_json(&text).map_err(err)
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: LexiconFile = serde_json::from_str(text).map_err(|e| e.to_string())?;
        Self::new(file)
    }

    pub fn new(file: LexiconFile) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&file.overlap_threshold) {
            return Err("overlap_threshold must be in [0, 1]".into());
        }
        let intents = file
            .intents
            .iter()
            .map(|i| {
                Ok(CompiledIntent {
                    name: i.name.clone(),
                    ask_keywords: i.ask_keywords.iter().map(|k| k.to_lowercase()).collect(),
                    answers: compile_all(&i.answer_patterns)?,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(Self {
            stopwords: file.stopwords.iter().map(|s| s.to_lowercase()).collect(),
            intents,
            cues: compile_all(&file.infection_cues)?,
            assertion: compile(&file.infection_assertion)?,
            hedges: compile_all(&file.hedges)?,
            non_assertions: compile_all(&file.non_assertions)?,
            source: file,
        })
    }

    fn content_tokens(&self, text: &str) -> HashSet<String> {
        tokenize(text, Lang::En)
            .into_iter()
            .filter(|t| !is_punctuation(t) && !self.stopwords.contains(t))
            .collect()
    }

    pub fn has_infection_cue(&self, query: &str) -> bool {
        self.cues.iter().any(|r| r.is_match(query))
    }

    /// Whether the text claims infection once negated and advisory mentions are removed.
    pub fn asserts_infection(&self, text: &str) -> bool {
        let mut t = text.to_string();
        for r in &self.non_assertions {
            t = r.replace_all(&t, " ").into_owned();
        }
        self.assertion.is_match(&t)
    }

    pub fn is_hedged(&self, text: &str) -> bool {
        self.hedges.iter().any(|r| r.is_match(text))
    }
}

/// Where schema conformance reads attribute values from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    /// Values as the model wrote them.
    Raw,
    /// Values after canonicalization.
    Canonical,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OovStats {
    /// Out-of-vocabulary values.
    pub count: usize,
    /// Number of predictions examined.
    pub total: usize,
    /// Predictions without any value for the attribute.
    pub missing: usize,
    pub offending: BTreeMap<String, usize>,
}

pub fn schema_conformance(
    preds: &[StructuredPrediction],
    dict: &AttributeDictionary,
    source: ValueSource,
) -> BTreeMap<Attribute, OovStats> {
    let mut out: BTreeMap<Attribute, OovStats> = Attribute::ALL
        .iter()
        .map(|a| {
            (
                *a,
                OovStats {
                    total: preds.len(),
                    ..Default::default()
                },
            )
        })
        .collect();
    for p in preds {
        for attr in Attribute::ALL {
            let values: Vec<String> = match source {
                ValueSource::Raw => p
                    .raw_metadata
                    .get(attr.name())
                    .map(|v| v.iter().filter(|s| !s.trim().is_empty()).cloned().collect())
                    .unwrap_or_default(),
                ValueSource::Canonical => p.attributes.values(attr).into_iter().map(String::from).collect(),
            };
            let stats = out.get_mut(&attr).expect("all attributes present");
            if values.is_empty() {
                stats.missing += 1;
            }
            for v in values {
                if dict.matches_vocabulary(attr, &v).is_none() {
                    stats.count += 1;
                    *stats.offending.entry(v).or_default() += 1;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenericnessStats {
    pub responses: usize,
    pub mean_words: f64,
    pub max_words: usize,
    pub unique_count: usize,
    pub duplicate_count: usize,
    pub empty_count: usize,
    pub stock_phrase_counts: BTreeMap<String, usize>,
    pub low_overlap_count: usize,
    pub low_overlap_ids: Vec<String>,
}

fn normalize_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> Option<f64> {
    let union = a.union(b).count();
    (union > 0).then(|| a.intersection(b).count() as f64 / union as f64)
}

pub fn genericness(preds: &[StructuredPrediction], corpus: &Corpus, lex: &Lexicons) -> GenericnessStats {
    let mut stats = GenericnessStats {
        responses: preds.len(),
        stock_phrase_counts: lex.source.stock_phrases.iter().map(|p| (p.clone(), 0)).collect(),
        ..Default::default()
    };
    let phrases: Vec<(String, String)> = lex
        .source
        .stock_phrases
        .iter()
        .map(|p| (p.clone(), normalize_text(p)))
        .collect();
    let mut seen = HashSet::new();
    let mut total_words = 0;
    for p in preds {
        let words = word_count(&p.response_en);
        total_words += words;
        stats.max_words = stats.max_words.max(words);
        let norm = normalize_text(&p.response_en);
        if norm.is_empty() {
            stats.empty_count += 1;
            continue;
        }
        if !seen.insert(norm.clone()) {
            stats.duplicate_count += 1;
        }
        for (phrase, needle) in &phrases {
            if norm.contains(needle.as_str()) {
                *stats.stock_phrase_counts.get_mut(phrase).expect("seeded") += 1;
            }
        }
        if let Some(enc) = corpus.get(&p.encounter_id) {
            let overlap = jaccard(&lex.content_tokens(&p.response_en), &lex.content_tokens(&enc.query_en()));
            if overlap.is_some_and(|o| o < lex.source.overlap_threshold) {
                stats.low_overlap_count += 1;
                stats.low_overlap_ids.push(p.encounter_id.clone());
            }
        }
    }
    stats.unique_count = seen.len();
    stats.mean_words = if preds.is_empty() {
        0.0
    } else {
        total_words as f64 / preds.len() as f64
    };
    stats.low_overlap_ids.sort();
    stats
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IntentStats {
    pub asked: usize,
    pub addressed: usize,
    pub asked_ids: Vec<String>,
    pub addressed_ids: Vec<String>,
}

pub fn intent_coverage(
    corpus: &Corpus,
    preds: &[StructuredPrediction],
    lex: &Lexicons,
) -> BTreeMap<String, IntentStats> {
    let by_id: HashMap<&str, &StructuredPrediction> = preds.iter().map(|p| (p.encounter_id.as_str(), p)).collect();
    let mut out: BTreeMap<String, IntentStats> =
        lex.intents.iter().map(|i| (i.name.clone(), IntentStats::default())).collect();
    let mut encounters: Vec<_> = corpus.iter().collect();
    encounters.sort_by(|a, b| a.encounter_id.cmp(&b.encounter_id));
    for enc in encounters {
        let query = enc.query_en().to_lowercase();
        let response = by_id.get(enc.encounter_id.as_str()).map(|p| p.response_en.as_str()).unwrap_or("");
        for intent in &lex.intents {
            if !intent.ask_keywords.iter().any(|k| query.contains(k.as_str())) {
                continue;
            }
            let s = out.get_mut(&intent.name).expect("seeded");
            s.asked += 1;
            s.asked_ids.push(enc.encounter_id.clone());
            if intent.answers.iter().any(|r| r.is_match(response)) {
                s.addressed += 1;
                s.addressed_ids.push(enc.encounter_id.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct HallucinationStats {
    pub flagged_ids: Vec<String>,
    pub flagged_count: usize,
    pub hedged_count: usize,
}

pub fn hallucination_screen(corpus: &Corpus, preds: &[StructuredPrediction], lex: &Lexicons) -> HallucinationStats {
    let mut stats = HallucinationStats::default();
    let mut flagged = BTreeSet::new();
    for p in preds {
        let Some(enc) = corpus.get(&p.encounter_id) else {
            continue;
        };
        let asserts = lex.asserts_infection(&p.response_en) || p.attributes.infection.as_deref() == Some("infected");
        if asserts && !lex.has_infection_cue(&enc.query_en()) && flagged.insert(p.encounter_id.clone()) && lex.is_hedged(&p.response_en) {
            stats.hedged_count += 1;
        }
    }
    stats.flagged_count = flagged.len();
    stats.flagged_ids = flagged.into_iter().collect();
    stats
}

pub fn label_distribution(preds: &[StructuredPrediction]) -> BTreeMap<Attribute, Vec<LabelCount>> {
    label_distribution_of(preds.iter().map(|p| &p.attributes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub predictions: usize,
    pub parse_status: BTreeMap<ParseStatus, usize>,
    /// Responses written mostly in a non-English script, left out of the text heuristics.
    pub ignored_non_english: usize,
    pub oov: BTreeMap<Attribute, OovStats>,
    pub genericness: GenericnessStats,
    pub intent_coverage: BTreeMap<String, IntentStats>,
    pub hallucination: HallucinationStats,
    pub label_distribution: BTreeMap<Attribute, Vec<LabelCount>>,
}

fn mostly_cjk(s: &str) -> bool {
    let letters: Vec<char> = s.chars().filter(|c| c.is_alphabetic()).collect();
    !letters.is_empty() && letters.iter().filter(|c| is_cjk(**c)).count() * 2 > letters.len()
}

pub fn analyze(
    preds: &[StructuredPrediction],
    corpus: &Corpus,
    dict: &AttributeDictionary,
    lex: &Lexicons,
) -> AnalysisReport {
    let mut parse_status = BTreeMap::new();
    for p in preds {
        *parse_status.entry(p.parse_status).or_default() += 1;
    }
    let (english, other): (Vec<StructuredPrediction>, Vec<StructuredPrediction>) =
        preds.iter().cloned().partition(|p| !mostly_cjk(&p.response_en));
    AnalysisReport {
        predictions: preds.len(),
        parse_status,
        ignored_non_english: other.len(),
        oov: schema_conformance(preds, dict, ValueSource::Raw),
        genericness: genericness(&english, corpus, lex),
        intent_coverage: intent_coverage(corpus, &english, lex),
        hallucination: hallucination_screen(corpus, &english, lex),
        label_distribution: label_distribution(preds),
    }
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut o = String::new();
        let g = &self.genericness;
        let _ = writeln!(o, "Predictions: {}", self.predictions);
        for (status, n) in &self.parse_status {
            let _ = writeln!(o, "  {:?}: {n}", status);
        }
        let _ = writeln!(o, "\nResponse genericness");
        let _ = writeln!(
            o,
            "  words: mean {:.1}, max {}; unique {}, duplicates {}, empty {}",
            g.mean_words, g.max_words, g.unique_count, g.duplicate_count, g.empty_count
        );
        for (phrase, n) in &g.stock_phrase_counts {
            let _ = writeln!(o, "  \"{phrase}\": {n}/{}", g.responses);
        }
        let _ = writeln!(o, "  low query overlap: {}", g.low_overlap_count);
        let _ = writeln!(o, "\nIntent coverage");
        for (name, s) in &self.intent_coverage {
            let _ = writeln!(o, "  {name}: {}/{} addressed", s.addressed, s.asked);
        }
        let _ = writeln!(o, "\nInfection claims without cues in the query");
        let _ = writeln!(
            o,
            "  flagged {} (hedged {}){}",
            self.hallucination.flagged_count,
            self.hallucination.hedged_count,
            if self.hallucination.flagged_ids.is_empty() {
                String::new()
            } else {
                format!(": {}", self.hallucination.flagged_ids.join(", "))
            }
        );
        let _ = writeln!(o, "\nSchema conformance (raw values)");
        for (attr, s) in &self.oov {
            let _ = write!(o, "  {attr}: {} OOV, {} missing of {}", s.count, s.missing, s.total);
            if !s.offending.is_empty() {
                let vals: Vec<String> = s.offending.iter().map(|(v, n)| format!("{v} x{n}")).collect();
                let _ = write!(o, " [{}]", vals.join(", "));
            }
            let _ = writeln!(o);
        }
        let _ = writeln!(o, "\nLabel distribution");
        for (attr, rows) in &self.label_distribution {
            let cells: Vec<String> = rows.iter().map(|r| format!("{} {:.1}%", r.label, r.percent)).collect();
            let _ = writeln!(o, "  {attr}: {}", if cells.is_empty() { "-".into() } else { cells.join(", ") });
        }
        let _ = writeln!(o, "\nIgnored non-English responses: {}", self.ignored_non_english);
        o
    }
}
