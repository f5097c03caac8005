use std::fmt;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{GenParams, GenerationError, RawGeneration};
use crate::media::{encode_image, DEFAULT_RESIZE_EDGE};
use crate::prompting::{Message, Part, Role};
use crate::retry::{post_json, RetryPolicy};

/// Field names of the chat-completion request and response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WireSchema {
    pub model_field: String,
    pub messages_field: String,
    pub role_field: String,
    pub content_field: String,
    pub temperature_field: String,
    pub top_p_field: String,
    pub max_tokens_field: String,
    pub seed_field: String,
    pub part_type_field: String,
    pub text_part_type: String,
    pub text_field: String,
    pub image_part_type: String,
    /// Dotted path to the data URL inside an image part, e.g. `image_url.url`.
    pub image_url_path: String,
    /// JSON pointer to the generated text in the response.
    pub response_pointer: String,
}

impl Default for WireSchema {
    fn default() -> Self {
        Self {
            model_field: "model".into(),
            messages_field: "messages".into(),
            role_field: "role".into(),
            content_field: "content".into(),
            temperature_field: "temperature".into(),
            top_p_field: "top_p".into(),
            max_tokens_field: "max_tokens".into(),
            seed_field: "seed".into(),
            part_type_field: "type".into(),
            text_part_type: "text".into(),
            text_field: "text".into(),
            image_part_type: "image_url".into(),
            image_url_path: "image_url.url".into(),
            response_pointer: "/choices/0/message/content".into(),
        }
    }
}

#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatClientConfig {
    pub endpoint: String,
    /// Header templates; `{credential}` is replaced by the credential value.
    pub headers: Vec<(String, String)>,
    /// Name of the environment variable holding the credential.
    pub credential_env: Option<String>,
    pub wire: WireSchema,
    pub retry: RetryPolicy,
    pub timeout_secs: u64,
    pub resize_edge: Option<u32>,
}

impl Default for ChatClientConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            headers: vec![("Authorization".into(), "Bearer {credential}".into())],
            credential_env: None,
            wire: WireSchema::default(),
            retry: RetryPolicy::default(),
            timeout_secs: 120,
            resize_edge: Some(DEFAULT_RESIZE_EDGE),
        }
    }
}

impl fmt::Debug for ChatClientConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatClientConfig")
            .field("endpoint", &self.endpoint)
            .field("credential_env", &self.credential_env)
            .field("retry", &self.retry)
            .field("timeout_secs", &self.timeout_secs)
            .field("resize_edge", &self.resize_edge)
            .finish_non_exhaustive()
    }
}

/// OpenAI-style chat-completion client. Cheap to clone and safe to share.
#[derive(Clone)]
pub struct ChatClient {
    client: reqwest::Client,
    config: ChatClientConfig,
    headers: Vec<(String, String)>,
}

impl fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatClient").field("config", &self.config).finish_non_exhaustive()
    }
}

fn set_path(obj: &mut Map<String, Value>, dotted: &str, value: Value) {
    let mut parts = dotted.split('.').peekable();
    let mut cur = obj;
    while let Some(key) = parts.next() {
        if parts.peek().is_none() {
            cur.insert(key.to_string(), value);
            return;
        }
        cur = cur
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("intermediate path segment is an object");
    }
}

impl ChatClient {
    pub fn new(config: ChatClientConfig) -> Result<Self, GenerationError> {
        if config.endpoint.is_empty() {
            return Err(GenerationError::Config("chat endpoint is not set".into()));
        }
        let credential = match &config.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GenerationError::Config(format!("credential variable `{var}` is not set"))
            })?),
            None => None,
        };
        let headers = config
            .headers
            .iter()
            .filter(|(_, v)| credential.is_some() || !v.contains("{credential}"))
            .map(|(k, v)| {
                let v = match &credential {
                    Some(c) => v.replace("{credential}", c),
                    None => v.clone(),
                };
                (k.clone(), v)
            })
            .collect();
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GenerationError::Config(e.to_string()))?;
        Ok(Self {
            client,
            config,
            headers,
        })
    }

    pub fn config(&self) -> &ChatClientConfig {
        &self.config
    }

    /// The request body for `messages`. Images are embedded as base64 data URLs.
    pub fn request_body(&self, messages: &[Message], params: &GenParams) -> Result<Value, GenerationError> {
        let w = &self.config.wire;
        let mut wire_messages = Vec::with_capacity(messages.len());
        for m in messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
                Role::Assistant => "assistant",
            };
            let has_images = m.images().next().is_some();
            let content = if has_images {
                let mut parts = Vec::with_capacity(m.parts.len());
                for p in &m.parts {
                    let mut part = Map::new();
                    match p {
                        Part::Text { text } => {
                            part.insert(w.part_type_field.clone(), json!(w.text_part_type));
                            part.insert(w.text_field.clone(), json!(text));
                        }
                        Part::Image { image } => {
                            let enc = encode_image(&image.path, self.config.resize_edge)
                                .map_err(GenerationError::Image)?;
                            part.insert(w.part_type_field.clone(), json!(w.image_part_type));
                            set_path(&mut part, &w.image_url_path, json!(enc.data_url()));
                        }
                    }
                    parts.push(Value::Object(part));
                }
                Value::Array(parts)
            } else {
                Value::String(m.text())
            };
            let mut obj = Map::new();
            obj.insert(w.role_field.clone(), json!(role));
            obj.insert(w.content_field.clone(), content);
            wire_messages.push(Value::Object(obj));
        }
        let mut body = Map::new();
        body.insert(w.model_field.clone(), json!(params.model_name));
        body.insert(w.messages_field.clone(), Value::Array(wire_messages));
        body.insert(w.temperature_field.clone(), json!(params.temperature));
        body.insert(w.top_p_field.clone(), json!(params.top_p));
        body.insert(w.max_tokens_field.clone(), json!(params.max_new_tokens));
        if let Some(seed) = params.seed {
            body.insert(w.seed_field.clone(), json!(seed));
        }
        Ok(Value::Object(body))
    }

    pub async fn generate(
        &self,
        encounter_id: &str,
        messages: &[Message],
        params: &GenParams,
    ) -> Result<RawGeneration, GenerationError> {
        let body = self.request_body(messages, params)?;
        let started = Instant::now();
        let (reply, attempts) = post_json(
            &self.client,
            &self.config.endpoint,
            &self.headers,
            &body,
            &self.config.retry,
        )
        .await
        .map_err(|f| GenerationError::Http {
            status: f.status,
            body: f.body,
            attempts: f.attempts,
        })?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let text = match reply.pointer(&self.config.wire.response_pointer) {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Null) => String::new(),
            _ => {
                return Err(GenerationError::BadResponse {
                    reason: format!("no text at {}", self.config.wire.response_pointer),
                    attempts,
                })
            }
        };
        let mut provider_meta = Map::new();
        if let Some(obj) = reply.as_object() {
            for key in ["id", "model", "usage", "created"] {
                if let Some(v) = obj.get(key) {
                    provider_meta.insert(key.to_string(), v.clone());
                }
            }
        }
        if let Some(reason) = reply.pointer("/choices/0/finish_reason") {
            provider_meta.insert("finish_reason".into(), reason.clone());
        }
        Ok(RawGeneration {
            encounter_id: encounter_id.to_string(),
            text,
            latency_ms,
            provider_meta,
            attempt_count: attempts,
        })
    }
}
