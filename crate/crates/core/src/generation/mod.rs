//! Sending prompts to a chat endpoint, or to a deterministic stand-in, and
//! keeping the raw text.

mod http;
mod stub;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub use http::{ChatClient, ChatClientConfig, WireSchema};
pub use stub::{FaultMode, StubGenerator};

use crate::prompting::Message;

#[derive(Debug, thiserror::Error)]
pub enum GenerationError {
    #[error("generation request failed after {attempts} attempt(s) (status {status:?}): {body}")]
    Http {
        status: Option<u16>,
        body: String,
        attempts: u32,
    },
    #[error("unexpected response shape after {attempts} attempt(s): {reason}")]
    BadResponse { reason: String, attempts: u32 },
    #[error("could not encode image: {0}")]
    Image(String),
    #[error("invalid generation config: {0}")]
    Config(String),
}

impl GenerationError {
    pub fn attempts(&self) -> u32 {
        match self {
            GenerationError::Http { attempts, .. } | GenerationError::BadResponse { attempts, .. } => *attempts,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub model_name: String,
    pub seed: Option<u64>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            top_p: 0.9,
            max_new_tokens: 4096,
            model_name: "meta-llama/Llama-4-Scout-17B-16E-Instruct".into(),
            seed: None,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), GenerationError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GenerationError::Config("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GenerationError::Config("top_p must be in (0, 1]".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(GenerationError::Config("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawGeneration {
    pub encounter_id: String,
    pub text: String,
    pub latency_ms: u64,
    pub provider_meta: Map<String, Value>,
    pub attempt_count: u32,
}

#[derive(Debug, Clone)]
pub enum Generator {
    Http(ChatClient),
    Stub(StubGenerator),
}

impl Generator {
    pub async fn generate(
        &self,
        encounter_id: &str,
        messages: &[Message],
        params: &GenParams,
    ) -> Result<RawGeneration, GenerationError> {
        match self {
            Generator::Http(c) => c.generate(encounter_id, messages, params).await,
            Generator::Stub(s) => Ok(s.generate(encounter_id, messages, params)),
        }
    }
}

/// One generation request.
#[derive(Debug, Clone)]
pub struct GenerationJob {
    pub encounter_id: String,
    pub messages: Vec<Message>,
}

/// Run every job with at most `concurrency` requests in flight. Results come
/// back in job order.
pub async fn generate_all(
    generator: &Generator,
    jobs: Vec<GenerationJob>,
    params: &GenParams,
    concurrency: usize,
) -> Vec<(String, Result<RawGeneration, GenerationError>)> {
    stream::iter(jobs)
        .map(|job| async move {
            let result = generator.generate(&job.encounter_id, &job.messages, params).await;
            (job.encounter_id, result)
        })
        .buffered(concurrency.max(1))
        .collect()
        .await
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawLogRecord {
    pub encounter_id: String,
    pub text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub timestamp: String,
}

/// Append-only JSON-lines log of raw generations.
pub struct RawLog {
    out: BufWriter<File>,
}

impl RawLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, g: &RawGeneration, timestamp: &str) -> std::io::Result<()> {
        let record = RawLogRecord {
            encounter_id: g.encounter_id.clone(),
            text: g.text.clone(),
            latency_ms: g.latency_ms,
            attempt_count: g.attempt_count,
            timestamp: timestamp.to_string(),
        };
        serde_json::to_writer(&mut self.out, &record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

pub fn read_raw_log(path: &Path) -> std::io::Result<Vec<RawLogRecord>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::AttributeDictionary;
    use std::sync::Arc;

    #[test]
    fn param_validation() {
        assert!(GenParams::default().validate().is_ok());
        let bad = [
            GenParams { temperature: -0.1, ..Default::default() },
            GenParams { top_p: 0.0, ..Default::default() },
            GenParams { top_p: 1.5, ..Default::default() },
            GenParams { max_new_tokens: 0, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[tokio::test]
    async fn generate_all_preserves_order() {
        let g = Generator::Stub(StubGenerator::new(Arc::new(AttributeDictionary::builtin()), FaultMode::None, 120));
        let jobs: Vec<GenerationJob> = (0..20)
            .map(|i| GenerationJob {
                encounter_id: format!("e{i:02}"),
                messages: vec![Message::user(&[], format!("query {i}"))],
            })
            .collect();
        let out = generate_all(&g, jobs, &GenParams::default(), 4).await;
        let ids: Vec<&str> = out.iter().map(|(id, _)| id.as_str()).collect();
        let expected: Vec<String> = (0..20).map(|i| format!("e{i:02}")).collect();
        assert_eq!(ids, expected);
        assert!(out.iter().all(|(_, r)| r.is_ok()));
    }

    #[test]
    fn raw_log_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.jsonl");
        let g = RawGeneration {
            encounter_id: "e1".into(),
            text: "{\"a\":1}".into(),
            latency_ms: 3,
            provider_meta: Map::new(),
            attempt_count: 1,
        };
        RawLog::open(&path).unwrap().append(&g, "t0").unwrap();
        RawLog::open(&path).unwrap().append(&g, "t1").unwrap();
        let records = read_raw_log(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].timestamp, "t1");
        assert_eq!(records[0].text, g.text);
    }
}
