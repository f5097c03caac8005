//! Lexical metrics and run-level reports.

pub mod bleu;
pub mod rouge;
pub mod tokenize;

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use bleu::{delta_bleu, WeightedReference, BLEU_EPSILON};
pub use rouge::{lcs_len, rouge_l, rouge_lsum, rouge_lsum_tokens, rouge_n, split_sentences, Prf};
pub use tokenize::{tokenize, Lang};

use crate::corpus::Corpus;
use crate::postprocess::StructuredPrediction;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no references")]
    NoReferences,
    #[error("reference has no tokens")]
    EmptyReference,
    #[error("reference weight {0} outside [-1, 1]")]
    BadWeight(f64),
    #[error("prediction for unknown encounter `{0}`")]
    UnknownEncounter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiRef {
    #[default]
    Max,
    Mean,
}

/// Aggregate a single-reference metric over several references.
pub fn score_multi_ref<R>(refs: &[R], agg: MultiRef, metric: impl Fn(&R) -> f64) -> Result<f64, MetricError> {
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let scores = refs.iter().map(metric);
    Ok(match agg {
        MultiRef::Max => scores.fold(f64::NEG_INFINITY, f64::max),
        MultiRef::Mean => scores.sum::<f64>() / refs.len() as f64,
    })
}

pub const METRICS: [&str; 5] = ["dBLEU", "R1", "R2", "RL", "RLsum"];

/// Table columns in report order; the reserved ones are never computed here.
pub const TABLE_COLUMNS: [&str; 11] = [
    "dBLEU", "R1", "R2", "RL", "RLsum", "BERT-mn", "BERT-mx", "DeepSeekV3", "Gemini", "GPT-4o", "Avg",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub aggregation: MultiRef,
    pub max_n: usize,
    /// `zh` scores against the Chinese references with the Chinese tokenizer.
    pub lang: Lang,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            aggregation: MultiRef::Max,
            max_n: 4,
            lang: Lang::En,
        }
    }
}

/// Scores of one hypothesis, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncounterScores {
    #[serde(rename = "dBLEU")]
    pub dbleu: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    #[serde(rename = "RL")]
    pub rl: f64,
    #[serde(rename = "RLsum")]
    pub rlsum: f64,
}

impl EncounterScores {
    pub fn zero() -> Self {
        Self {
            dbleu: 0.0,
            r1: 0.0,
            r2: 0.0,
            rl: 0.0,
            rlsum: 0.0,
        }
    }

    fn values(&self) -> [f64; 5] {
        [self.dbleu, self.r1, self.r2, self.rl, self.rlsum]
    }
}

/// Score a hypothesis against its references. `refs` must be nonempty.
pub fn score_encounter(hyp: &str, refs: &[String], cfg: &EvalConfig) -> Result<EncounterScores, MetricError> {
    let refs: Vec<&String> = refs.iter().filter(|r| !r.trim().is_empty()).collect();
    if refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let hyp_tokens = tokenize(hyp, cfg.lang);
    if hyp_tokens.is_empty() {
        return Ok(EncounterScores::zero());
    }
    let ref_tokens: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r, cfg.lang)).collect();
    let weighted = ref_tokens
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| WeightedReference::unit(t.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let agg = cfg.aggregation;
    Ok(EncounterScores {
        dbleu: delta_bleu(&hyp_tokens, &weighted, cfg.max_n)?,
        r1: score_multi_ref(&ref_tokens, agg, |r| rouge_n(&hyp_tokens, r, 1).f1)?,
        r2: score_multi_ref(&ref_tokens, agg, |r| rouge_n(&hyp_tokens, r, 2).f1)?,
        rl: score_multi_ref(&ref_tokens, agg, |r| rouge_l(&hyp_tokens, r).f1)?,
        rlsum: score_multi_ref(&refs, agg, |r| rouge_lsum(hyp, r, cfg.lang))?,
    })
}

/// Corpus averages scaled by 100. Reserved columns are always `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    #[serde(rename = "dBLEU")]
    pub dbleu: f64,
    #[serde(rename = "R1")]
    pub r1: f64,
    #[serde(rename = "R2")]
    pub r2: f64,
    #[serde(rename = "RL")]
    pub rl: f64,
    #[serde(rename = "RLsum")]
    pub rlsum: f64,
    #[serde(rename = "BERT-mn")]
    pub bert_mn: Option<f64>,
    #[serde(rename = "BERT-mx")]
    pub bert_mx: Option<f64>,
    #[serde(rename = "DeepSeekV3")]
    pub deepseek_v3: Option<f64>,
    #[serde(rename = "Gemini")]
    pub gemini: Option<f64>,
    #[serde(rename = "GPT-4o")]
    pub gpt_4o: Option<f64>,
    /// Mean of the computed columns.
    #[serde(rename = "Avg")]
    pub avg: f64,
}

impl Averages {
    fn column(&self, name: &str) -> Option<f64> {
        match name {
            "dBLEU" => Some(self.dbleu),
            "R1" => Some(self.r1),
            "R2" => Some(self.r2),
            "RL" => Some(self.rl),
            "RLsum" => Some(self.rlsum),
            "BERT-mn" => self.bert_mn,
            "BERT-mx" => self.bert_mx,
            "DeepSeekV3" => self.deepseek_v3,
            "Gemini" => self.gemini,
            "GPT-4o" => self.gpt_4o,
            "Avg" => Some(self.avg),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_encounter: BTreeMap<String, EncounterScores>,
    pub averages: Averages,
    pub scored: usize,
    /// Encounters without references.
    pub skipped: Vec<String>,
    /// Scored encounters whose hypothesis was empty (they score 0).
    pub empty_hypotheses: usize,
    /// Gold encounters without a prediction (scored as empty hypotheses).
    pub missing_predictions: Vec<String>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table with one row.
    pub fn render_table(&self, system: &str) -> String {
        let cells: Vec<String> = TABLE_COLUMNS
            .iter()
            .map(|c| match self.averages.column(c) {
                Some(v) => format!("{v:.2}"),
                None => "-".to_string(),
            })
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "| System | {} |", TABLE_COLUMNS.join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(TABLE_COLUMNS.len()));
        let _ = writeln!(out, "| {system} | {} |", cells.join(" | "));
        out
    }
}

/// Score every prediction against the gold references.
pub fn evaluate_run(
    predictions: &[StructuredPrediction],
    gold: &Corpus,
    cfg: &EvalConfig,
) -> Result<MetricReport, MetricError> {
    let mut hyps: BTreeMap<&str, &str> = BTreeMap::new();
    for p in predictions {
        if gold.get(&p.encounter_id).is_none() {
            return Err(MetricError::UnknownEncounter(p.encounter_id.clone()));
        }
        hyps.insert(&p.encounter_id, &p.response_en);
    }
    let predicted: HashSet<&str> = hyps.keys().copied().collect();
    let mut missing: Vec<String> = gold
        .iter()
        .filter(|e| !predicted.contains(e.encounter_id.as_str()) && has_refs(e, cfg.lang))
        .map(|e| e.encounter_id.clone())
        .collect();
    missing.sort();
    for id in &missing {
        hyps.insert(id, "");
    }

    let mut per_encounter = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut empty = 0;
    for (id, hyp) in hyps {
        let enc = gold.get(id).expect("checked above");
        let refs = match cfg.lang {
            Lang::En => &enc.reference_responses_en,
            Lang::Zh => &enc.reference_responses_zh,
        };
        match score_encounter(hyp, refs, cfg) {
            Ok(scores) => {
                if tokenize(hyp, cfg.lang).is_empty() && predicted.contains(id) {
                    empty += 1;
                }
                per_encounter.insert(id.to_string(), scores);
            }
            Err(MetricError::NoReferences) => skipped.push(id.to_string()),
            Err(e) => return Err(e),
        }
    }

    let mut sums = [0.0f64; 5];
    for s in per_encounter.values() {
        for (acc, v) in sums.iter_mut().zip(s.values()) {
            *acc += v;
        }
    }
    let n = per_encounter.len();
    let mean = |i: usize| if n == 0 { 0.0 } else { sums[i] / n as f64 * 100.0 };
    let cols = [mean(0), mean(1), mean(2), mean(3), mean(4)];
    let averages = Averages {
        dbleu: cols[0],
        r1: cols[1],
        r2: cols[2],
        rl: cols[3],
        rlsum: cols[4],
        bert_mn: None,
        bert_mx: None,
        deepseek_v3: None,
        gemini: None,
        gpt_4o: None,
        avg: cols.iter().sum::<f64>() / cols.len() as f64,
    };
    Ok(MetricReport {
        per_encounter,
        averages,
        scored: n,
        skipped,
        empty_hypotheses: empty,
        missing_predictions: missing,
    })
}

fn has_refs(e: &crate::corpus::Encounter, lang: Lang) -> bool {
    let refs = match lang {
        Lang::En => &e.reference_responses_en,
        Lang::Zh => &e.reference_responses_zh,
    };
    refs.iter().any(|r| !r.trim().is_empty())
}
