use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{HttpProviderConfig, ProviderKind, DEFAULT_IMAGE_DIM, DEFAULT_TEXT_DIM};
use crate::evaluation::EvalConfig;
use crate::generation::{ChatClientConfig, FaultMode, GenParams};
use crate::prompting::TokenBudget;
use crate::retrieval::{Aggregation, RetrievalConfig};

use super::PipelineError;

/// The four ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    ZeroShot,
    FewShot,
    RagText,
    RagMultimodal,
}

impl RunMode {
    pub const ALL: [RunMode; 4] = [RunMode::ZeroShot, RunMode::FewShot, RunMode::RagText, RunMode::RagMultimodal];

    pub fn name(self) -> &'static str {
        match self {
            RunMode::ZeroShot => "zero_shot",
            RunMode::FewShot => "few_shot",
            RunMode::RagText => "rag_text",
            RunMode::RagMultimodal => "rag_multimodal",
        }
    }

    pub fn is_rag(self) -> bool {
        matches!(self, RunMode::RagText | RunMode::RagMultimodal)
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunMode::ALL
            .into_iter()
            .find(|m| m.name() == s.replace('-', "_"))
            .ok_or_else(|| format!("unknown mode `{s}` (expected zero_shot, few_shot, rag_text or rag_multimodal)"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Exemplar corpus.
    pub train: Option<PathBuf>,
    /// Corpus the run predicts for.
    pub target: Option<PathBuf>,
    /// Gold corpus for evaluation; defaults to `target`.
    pub gold: Option<PathBuf>,
    pub image_root: Option<PathBuf>,
    pub text_store: Option<PathBuf>,
    pub image_store: Option<PathBuf>,
    /// Stores holding the target encounters' vectors; default to the exemplar stores.
    pub query_text_store: Option<PathBuf>,
    pub query_image_store: Option<PathBuf>,
    pub dictionary: Option<PathBuf>,
    pub lexicons: Option<PathBuf>,
    pub system_template: Option<PathBuf>,
    pub user_template: Option<PathBuf>,
    pub schema_template: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub mode: RunMode,
    pub run_id: Option<String>,
    pub concurrency: usize,
    pub target_split: String,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: RunMode::RagMultimodal,
            run_id: None,
            concurrency: 4,
            target_split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalSection {
    pub alpha: f64,
    pub k: usize,
    pub image_aggregation: Aggregation,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        let d = RetrievalConfig::default();
        Self {
            alpha: d.alpha,
            k: d.k,
            image_aggregation: d.image_aggregation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSection {
    pub max_response_words: usize,
    /// Few-shot exemplars; when empty the first `few_shot_count` exemplar ids are used.
    pub fixed_exemplar_ids: Vec<String>,
    pub few_shot_count: usize,
    pub include_zh: bool,
    /// Attach exemplar images. Unset: on for few-shot and multimodal runs, off for text-only retrieval.
    pub exemplar_images: Option<bool>,
    pub max_prompt_tokens: usize,
    pub chars_per_token: f64,
    pub tokens_per_image: usize,
}

impl Default for PromptSection {
    fn default() -> Self {
        let b = TokenBudget::default();
        Self {
            max_response_words: 120,
            fixed_exemplar_ids: Vec::new(),
            few_shot_count: 2,
            include_zh: false,
            exemplar_images: None,
            max_prompt_tokens: b.max_prompt_tokens,
            chars_per_token: b.chars_per_token,
            tokens_per_image: b.tokens_per_image,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub provider: ProviderKind,
    pub text_dim: usize,
    pub image_dim: usize,
    pub text_http: Option<HttpProviderConfig>,
    pub image_http: Option<HttpProviderConfig>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            text_dim: DEFAULT_TEXT_DIM,
            image_dim: DEFAULT_IMAGE_DIM,
            text_http: None,
            image_http: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub provider: GeneratorKind,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub model_name: String,
    pub seed: Option<u64>,
    pub fault: FaultMode,
    pub http: Option<ChatClientConfig>,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let p = GenParams::default();
        Self {
            provider: GeneratorKind::Stub,
            temperature: p.temperature,
            top_p: p.top_p,
            max_new_tokens: p.max_new_tokens,
            model_name: p.model_name,
            seed: p.seed,
            fault: FaultMode::None,
            http: None,
        }
    }
}

impl GenerationSection {
    pub fn params(&self) -> GenParams {
        GenParams {
            temperature: self.temperature,
            top_p: self.top_p,
            max_new_tokens: self.max_new_tokens,
            model_name: self.model_name.clone(),
            seed: self.seed,
        }
    }
}

/// Everything a command needs. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub run: RunSection,
    pub retrieval: RetrievalSection,
    pub prompt: PromptSection,
    pub embedding: EmbeddingSection,
    pub generation: GenerationSection,
    pub evaluation: EvalConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<RunMode>,
    pub alpha: Option<f64>,
    pub k: Option<usize>,
    pub out: Option<PathBuf>,
    pub run_id: Option<String>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for slot in [
            &mut p.train,
            &mut p.target,
            &mut p.gold,
            &mut p.image_root,
            &mut p.text_store,
            &mut p.image_store,
            &mut p.query_text_store,
            &mut p.query_image_store,
            &mut p.dictionary,
            &mut p.lexicons,
            &mut p.system_template,
            &mut p.user_template,
            &mut p.schema_template,
            &mut p.output_dir,
        ] {
            if let Some(path) = slot.as_mut() {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.run.mode = m;
        }
        if let Some(a) = o.alpha {
            self.retrieval.alpha = a;
        }
        if let Some(k) = o.k {
            self.retrieval.k = k;
        }
        if let Some(out) = &o.out {
            self.paths.output_dir = Some(out.clone());
        }
        if let Some(id) = &o.run_id {
            self.run.run_id = Some(id.clone());
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.retrieval.alpha) {
            return Err(PipelineError::Config(format!("alpha {} outside [0, 1]", self.retrieval.alpha)));
        }
        if self.retrieval.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        if self.run.concurrency == 0 {
            return Err(PipelineError::Config("concurrency must be at least 1".into()));
        }
        self.generation
            .params()
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the effective configuration.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn run_id(&self) -> String {
        self.run.run_id.clone().unwrap_or_else(|| self.run.mode.name().to_string())
    }

    pub fn retrieval_config(&self) -> RetrievalConfig {
        RetrievalConfig {
            alpha: self.retrieval.alpha,
            k: self.retrieval.k,
            mode: match self.run.mode {
                RunMode::RagText => crate::retrieval::RetrievalMode::TextOnly,
                _ => crate::retrieval::RetrievalMode::Multimodal,
            },
            image_aggregation: self.retrieval.image_aggregation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_document() {
        let c = PipelineConfig::from_toml("").unwrap();
        assert_eq!(c.retrieval.alpha, 0.5);
        assert_eq!(c.retrieval.k, 2);
        assert_eq!(c.run.concurrency, 4);
        assert_eq!(c.generation.temperature, 0.2);
        assert_eq!(c.generation.top_p, 0.9);
        assert_eq!(c.generation.max_new_tokens, 4096);
        assert_eq!(c.prompt.max_response_words, 120);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn parses_sections_and_rejects_typos() {
        let c = PipelineConfig::from_toml(
            r#"
            [paths]
            train = "train.jsonl"
            [run]
            mode = "rag_text"
            [retrieval]
            alpha = 0.75
            image_aggregation = "max"
            [generation]
            fault = "wrap_in_fences"
            "#,
        )
        .unwrap();
        assert_eq!(c.run.mode, RunMode::RagText);
        assert_eq!(c.retrieval.image_aggregation, Aggregation::Max);
        assert_eq!(c.generation.fault, FaultMode::WrapInFences);
        assert!(PipelineConfig::from_toml("[retrieval]\nalhpa = 1.0").is_err());
    }

    #[test]
    fn overrides_and_hash() {
        let mut c = PipelineConfig::default();
        let h0 = c.sha256();
        c.apply(&Overrides {
            alpha: Some(1.0),
            k: Some(5),
            mode: Some(RunMode::ZeroShot),
            ..Default::default()
        });
        assert_eq!((c.retrieval.alpha, c.retrieval.k, c.run.mode), (1.0, 5, RunMode::ZeroShot));
        assert_ne!(c.sha256(), h0);
        assert_eq!(c.sha256().len(), 64);
        c.retrieval.alpha = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let mut c = PipelineConfig::from_toml("[paths]\ntrain = \"d/train.jsonl\"\ntarget = \"/abs/t.jsonl\"").unwrap();
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(c.paths.train.unwrap(), PathBuf::from("/cfg/d/train.jsonl"));
        assert_eq!(c.paths.target.unwrap(), PathBuf::from("/abs/t.jsonl"));
    }

    #[test]
    fn mode_names() {
        for m in RunMode::ALL {
            assert_eq!(m.name().parse::<RunMode>().unwrap(), m);
        }
        assert_eq!("rag-text".parse::<RunMode>().unwrap(), RunMode::RagText);
    }
}
