//! Subcommand implementations: ingest, embed-check, run, eval, analyze, convert.
//!
//! Each command takes a resolved [`PipelineConfig`]. Per-encounter problems
//! are collected and reported; only configuration errors and unreadable
//! inputs abort a command.

mod config;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use tracing::{info, warn};

pub use config::{
    EmbeddingSection, GenerationSection, GeneratorKind, Overrides, PathsConfig, PipelineConfig, PromptSection,
    RetrievalSection, RunMode, RunSection,
};

use crate::analysis::{analyze, AnalysisError, AnalysisReport, Lexicons};
use crate::corpus::convert::{convert_release, ConvertError};
use crate::corpus::{
    corpus_stats, load_corpus, AttributeDictionary, Corpus, CorpusError, CorpusStats, DictionaryError, Encounter,
    LoadReport, RecordError, Split,
};
use crate::embedding::{
    load_vector_store, EmbeddingError, EmbeddingProvider, FileProvider, HttpProvider, Modality, MockProvider,
    ProviderKind, Vector, VectorStore,
};
use crate::evaluation::{evaluate_run, MetricError, MetricReport};
use crate::generation::{generate_all, ChatClient, GenerationJob, Generator, RawLog, StubGenerator};
use crate::postprocess::{
    merge_predictions, postprocess, read_predictions, write_predictions, ParseOptions, ParseStatus, PredictionsError,
    StructuredPrediction,
};
use crate::prompting::{
    build_few_shot, build_rag_prompt, build_zero_shot, check_budget, Message, PromptError, PromptMode, PromptSpec,
    PromptTemplates, TokenBudget,
};
use crate::retrieval::{build_index, fused_retrieve, Index, RetrievalError, RetrievalMode};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Predictions(#[from] PredictionsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Convert(#[from] ConvertError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    std::fs::write(path, contents).map_err(io_err(path))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn load_dictionary(cfg: &PipelineConfig) -> Result<AttributeDictionary, PipelineError> {
    Ok(match &cfg.paths.dictionary {
        Some(p) => AttributeDictionary::load(p)?,
        None => AttributeDictionary::builtin(),
    })
}

pub fn load_lexicons(cfg: &PipelineConfig) -> Result<Lexicons, PipelineError> {
    Ok(match &cfg.paths.lexicons {
        Some(p) => Lexicons::load(p)?,
        None => Lexicons::builtin(),
    })
}

fn image_root_for(cfg: &PipelineConfig, corpus_path: &Path) -> PathBuf {
    cfg.paths
        .image_root
        .clone()
        .unwrap_or_else(|| corpus_path.parent().unwrap_or(Path::new(".")).to_path_buf())
}

fn target_split(cfg: &PipelineConfig) -> Result<Split, PipelineError> {
    cfg.run
        .target_split
        .parse()
        .map_err(|e: CorpusError| PipelineError::Config(e.to_string()))
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, PipelineError> {
    path.as_deref()
        .ok_or_else(|| PipelineError::Config(format!("paths.{what} is not set")))
}

fn load_split(
    cfg: &PipelineConfig,
    path: &Path,
    split: Split,
    dict: &AttributeDictionary,
) -> Result<(Corpus, LoadReport), PipelineError> {
    let (corpus, report) = load_corpus(path, split, &image_root_for(cfg, path), dict)?;
    for e in &report.errors {
        warn!(line = e.line, reason = %e.reason, "skipped corpus record in {}", path.display());
    }
    Ok((corpus, report))
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, Serialize)]
pub struct IngestedCorpus {
    pub role: String,
    pub path: PathBuf,
    pub stats_file: PathBuf,
    pub errors: Vec<RecordError>,
    pub corrections: usize,
    pub stats: CorpusStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub corpora: Vec<IngestedCorpus>,
}

impl IngestSummary {
    pub fn is_clean(&self) -> bool {
        self.corpora.iter().all(|c| c.errors.is_empty())
    }
}

/// Load every configured corpus and write a statistics file for each.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestSummary, PipelineError> {
    let dict = load_dictionary(cfg)?;
    let mut jobs: Vec<(&str, &Path, Split)> = Vec::new();
    if let Some(p) = &cfg.paths.train {
        jobs.push(("train", p, Split::Train));
    }
    if let Some(p) = &cfg.paths.target {
        jobs.push(("target", p, target_split(cfg)?));
    }
    if let Some(p) = &cfg.paths.gold {
        if Some(p) != cfg.paths.target.as_ref() {
            jobs.push(("gold", p, target_split(cfg)?));
        }
    }
    if jobs.is_empty() {
        return Err(PipelineError::Config("no corpus paths configured".into()));
    }
    let out = cfg.output_dir();
    let mut corpora = Vec::new();
    for (role, path, split) in jobs {
        let (corpus, report) = load_split(cfg, path, split, &dict)?;
        let stats = corpus_stats(&corpus);
        let stats_file = out.join(format!("stats_{role}_{}.json", split.name()));
        write_file(&stats_file, &serde_json::to_string_pretty(&stats).expect("stats serialize"))?;
        info!(role, encounters = corpus.len(), "ingested {}", path.display());
        corpora.push(IngestedCorpus {
            role: role.to_string(),
            path: path.to_path_buf(),
            stats_file,
            errors: report.errors,
            corrections: report.corrections.len(),
            stats,
        });
    }
    Ok(IngestSummary { corpora })
}

// ----------------------------------------------------------- embed-check

#[derive(Debug, Clone, Serialize)]
pub struct StoreCheck {
    pub path: PathBuf,
    pub modality: Modality,
    pub dim: usize,
    pub expected_dim: usize,
    pub entries: usize,
    /// `owner_id` or `owner_id#item` keys without a vector.
    pub missing: Vec<String>,
    pub non_unit: Vec<String>,
}

impl StoreCheck {
    pub fn passed(&self) -> bool {
        self.dim == self.expected_dim && self.missing.is_empty() && self.non_unit.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbedCheckReport {
    pub stores: Vec<StoreCheck>,
}

impl EmbedCheckReport {
    pub fn passed(&self) -> bool {
        self.stores.iter().all(StoreCheck::passed)
    }
}

fn check_store(path: &Path, store: &VectorStore, expected_dim: usize, owners: &[&Encounter]) -> StoreCheck {
    let mut missing = Vec::new();
    for enc in owners {
        match store.modality() {
            Modality::Text => {
                if store.get(&enc.encounter_id, 0).is_none() {
                    missing.push(enc.encounter_id.clone());
                }
            }
            Modality::Image => {
                for i in 0..enc.images.len() {
                    if store.get(&enc.encounter_id, i).is_none() {
                        missing.push(format!("{}#{i}", enc.encounter_id));
                    }
                }
            }
        }
    }
    let non_unit = store
        .entries()
        .iter()
        .filter(|e| !e.vector.is_unit())
        .map(|e| format!("{}#{}", e.owner_id, e.item_index))
        .collect();
    StoreCheck {
        path: path.to_path_buf(),
        modality: store.modality(),
        dim: store.dim(),
        expected_dim,
        entries: store.len(),
        missing,
        non_unit,
    }
}

/// Check vector stores against the corpora: coverage, dimensions and norms.
pub fn cmd_embed_check(cfg: &PipelineConfig) -> Result<EmbedCheckReport, PipelineError> {
    let dict = load_dictionary(cfg)?;
    let train = match &cfg.paths.train {
        Some(p) => Some(load_split(cfg, p, Split::Train, &dict)?.0),
        None => None,
    };
    let target = match &cfg.paths.target {
        Some(p) => Some(load_split(cfg, p, target_split(cfg)?, &dict)?.0),
        None => None,
    };
    let p = &cfg.paths;
    let e = &cfg.embedding;
    let train_owners: Vec<&Encounter> = train.iter().flat_map(|c| c.iter()).collect();
    let target_owners: Vec<&Encounter> = target.iter().flat_map(|c| c.iter()).collect();
    let query_text = p.query_text_store.clone().or_else(|| p.text_store.clone());
    let query_image = p.query_image_store.clone().or_else(|| p.image_store.clone());

    let mut plan: Vec<(PathBuf, usize, Vec<&Encounter>)> = Vec::new();
    for (path, dim, owners) in [
        (p.text_store.clone(), e.text_dim, &train_owners),
        (p.image_store.clone(), e.image_dim, &train_owners),
        (query_text, e.text_dim, &target_owners),
        (query_image, e.image_dim, &target_owners),
    ] {
        let Some(path) = path else { continue };
        match plan.iter_mut().find(|(q, _, _)| *q == path) {
            Some((_, _, existing)) => existing.extend(owners.iter().copied()),
            None => plan.push((path, dim, owners.clone())),
        }
    }
    if plan.is_empty() {
        return Err(PipelineError::Config("no vector stores configured".into()));
    }

    let mut stores = Vec::new();
    for (path, dim, mut owners) in plan {
        let mut seen = HashSet::new();
        owners.retain(|o| seen.insert(o.encounter_id.as_str()));
        let store = load_vector_store(&path)?;
        stores.push(check_store(&path, &store, dim, &owners));
    }
    Ok(EmbedCheckReport { stores })
}

// ------------------------------------------------------------------- run

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunFailure {
    pub encounter_id: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub mode: RunMode,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub started_at: String,
    pub finished_at: String,
    pub target_split: Split,
    pub encounters: usize,
    pub predictions: usize,
    pub parse_status: BTreeMap<ParseStatus, usize>,
    pub failures: Vec<RunFailure>,
    pub skipped_records: usize,
    pub exemplars_dropped_for_budget: usize,
    pub few_shot_exemplars: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub predictions_path: PathBuf,
    pub raw_log_path: PathBuf,
    pub manifest: RunManifest,
}

/// Exemplar indices and the providers that embed live queries.
struct Retriever {
    text_index: Index,
    image_index: Option<Index>,
    text: EmbeddingProvider,
    image: Option<EmbeddingProvider>,
}

async fn embed_corpus_text(provider: &EmbeddingProvider, corpus: &Corpus) -> Result<VectorStore, PipelineError> {
    let mut store = VectorStore::new(Modality::Text, provider.dim(), format!("{:?}", provider.kind()).to_lowercase());
    for enc in corpus.iter() {
        let v = provider.embed_text(&enc.encounter_id, &enc.query_en()).await?;
        store.push(&enc.encounter_id, 0, v)?;
    }
    Ok(store)
}

async fn embed_corpus_images(provider: &EmbeddingProvider, corpus: &Corpus) -> Result<VectorStore, PipelineError> {
    let mut store = VectorStore::new(Modality::Image, provider.dim(), format!("{:?}", provider.kind()).to_lowercase());
    for enc in corpus.iter() {
        for (i, img) in enc.images.iter().enumerate() {
            let v = provider.embed_image(&enc.encounter_id, i, img).await?;
            store.push(&enc.encounter_id, i, v)?;
        }
    }
    Ok(store)
}

fn restrict(store: &VectorStore, owners: &HashSet<&str>) -> Result<VectorStore, PipelineError> {
    let mut out = VectorStore::new(store.modality(), store.dim(), store.encoder_name());
    for e in store.entries() {
        if owners.contains(e.owner_id.as_str()) {
            out.push(&e.owner_id, e.item_index, e.vector.clone())?;
        }
    }
    Ok(out)
}

fn owners_of(store: &VectorStore) -> BTreeSet<String> {
    store.entries().iter().map(|e| e.owner_id.clone()).collect()
}

fn http_provider(
    cfg: &Option<crate::embedding::HttpProviderConfig>,
    what: &str,
    modality: Modality,
    dim: usize,
) -> Result<EmbeddingProvider, PipelineError> {
    let c = cfg
        .clone()
        .ok_or_else(|| PipelineError::Config(format!("embedding.{what} is required with the http provider")))?;
    Ok(EmbeddingProvider::Http(HttpProvider::new(c, modality, dim)))
}

async fn build_retriever(cfg: &PipelineConfig, train: &Corpus) -> Result<Retriever, PipelineError> {
    let multimodal = cfg.run.mode == RunMode::RagMultimodal;
    let e = &cfg.embedding;
    let train_ids: HashSet<&str> = train.iter().map(|x| x.encounter_id.as_str()).collect();

    let (text_store, image_store, text, image) = match e.provider {
        ProviderKind::File => {
            let need = |p: &Option<PathBuf>, key: &str| {
                p.clone().ok_or_else(|| {
                    PipelineError::Config(format!(
                        "mode {} needs paths.{key} when embeddings come from files",
                        cfg.run.mode
                    ))
                })
            };
            let text_path = need(&cfg.paths.text_store, "text_store")?;
            let text_store = load_vector_store(&text_path)?;
            let query_text = match &cfg.paths.query_text_store {
                Some(q) => load_vector_store(q)?,
                None => text_store.clone(),
            };
            let (image_store, query_image) = if multimodal {
                let image_path = need(&cfg.paths.image_store, "image_store")?;
                let image_store = load_vector_store(&image_path)?;
                let query_image = match &cfg.paths.query_image_store {
                    Some(q) => load_vector_store(q)?,
                    None => image_store.clone(),
                };
                (Some(restrict(&image_store, &train_ids)?), Some(query_image))
            } else {
                (None, None)
            };
            (
                restrict(&text_store, &train_ids)?,
                image_store,
                EmbeddingProvider::File(FileProvider::new(query_text)),
                query_image.map(|s| EmbeddingProvider::File(FileProvider::new(s))),
            )
        }
        ProviderKind::Mock | ProviderKind::Http => {
            let (text, image) = if e.provider == ProviderKind::Mock {
                (
                    EmbeddingProvider::Mock(MockProvider::new(Modality::Text, e.text_dim)),
                    multimodal.then(|| EmbeddingProvider::Mock(MockProvider::new(Modality::Image, e.image_dim))),
                )
            } else {
                (
                    http_provider(&e.text_http, "text_http", Modality::Text, e.text_dim)?,
                    if multimodal {
                        Some(http_provider(&e.image_http, "image_http", Modality::Image, e.image_dim)?)
                    } else {
                        None
                    },
                )
            };
            let text_store = embed_corpus_text(&text, train).await?;
            let image_store = match &image {
                Some(p) => Some(embed_corpus_images(p, train).await?),
                None => None,
            };
            (text_store, image_store, text, image)
        }
    };

    let (text_store, image_store) = match image_store {
        Some(image_store) => {
            let t = owners_of(&text_store);
            let i = owners_of(&image_store);
            let both: HashSet<&str> = t.intersection(&i).map(String::as_str).collect();
            if both.len() < t.len().max(i.len()) {
                warn!(
                    dropped = t.len().max(i.len()) - both.len(),
                    "exemplars without both text and image vectors are left out of multimodal retrieval"
                );
            }
            (restrict(&text_store, &both)?, Some(restrict(&image_store, &both)?))
        }
        None => (text_store, None),
    };
    if text_store.is_empty() {
        return Err(PipelineError::Config("no exemplar vectors available for retrieval".into()));
    }
    let text_index = build_index(&text_store, cfg.retrieval.image_aggregation)?;
    let image_index = match &image_store {
        Some(s) => Some(build_index(s, cfg.retrieval.image_aggregation)?),
        None => None,
    };
    Ok(Retriever {
        text_index,
        image_index,
        text,
        image,
    })
}

impl Retriever {
    async fn query_vectors(&self, enc: &Encounter) -> Result<(Vector, Vec<Vector>), PipelineError> {
        let q_text = self.text.embed_text(&enc.encounter_id, &enc.query_en()).await?;
        let mut q_images = Vec::new();
        if let Some(p) = &self.image {
            for (i, img) in enc.images.iter().enumerate() {
                q_images.push(p.embed_image(&enc.encounter_id, i, img).await?);
            }
        }
        Ok((q_text, q_images))
    }
}

fn prompt_spec(cfg: &PipelineConfig) -> Result<PromptSpec, PipelineError> {
    let p = &cfg.prompt;
    let mode = match cfg.run.mode {
        RunMode::ZeroShot => PromptMode::ZeroShot,
        RunMode::FewShot => PromptMode::FewShot,
        RunMode::RagText | RunMode::RagMultimodal => PromptMode::Rag,
    };
    let budget = TokenBudget {
        max_prompt_tokens: p.max_prompt_tokens,
        chars_per_token: p.chars_per_token,
        tokens_per_image: p.tokens_per_image,
    };
    budget.validate()?;
    Ok(PromptSpec {
        mode,
        templates: PromptTemplates::load(
            cfg.paths.system_template.as_deref(),
            cfg.paths.user_template.as_deref(),
            cfg.paths.schema_template.as_deref(),
        )?,
        max_response_words: p.max_response_words,
        fixed_exemplar_ids: Vec::new(),
        budget,
        include_zh: p.include_zh,
        exemplar_images: p.exemplar_images.unwrap_or(cfg.run.mode != RunMode::RagText),
    })
}

fn few_shot_ids(cfg: &PipelineConfig, train: &Corpus) -> Result<Vec<String>, PipelineError> {
    if !cfg.prompt.fixed_exemplar_ids.is_empty() {
        for id in &cfg.prompt.fixed_exemplar_ids {
            let enc = train
                .get(id)
                .ok_or_else(|| PipelineError::Config(format!("few-shot exemplar `{id}` is not in the train corpus")))?;
            if enc.gold_attributes.is_none() || enc.reference_responses_en.is_empty() {
                return Err(PipelineError::Config(format!("few-shot exemplar `{id}` has no gold output")));
            }
        }
        return Ok(cfg.prompt.fixed_exemplar_ids.clone());
    }
    let mut ids: Vec<&str> = train
        .iter()
        .filter(|e| e.gold_attributes.is_some() && !e.reference_responses_en.is_empty())
        .map(|e| e.encounter_id.as_str())
        .collect();
    ids.sort_unstable();
    ids.truncate(cfg.prompt.few_shot_count.max(1));
    if ids.is_empty() {
        return Err(PipelineError::Config("no train encounter has gold output for few-shot prompting".into()));
    }
    Ok(ids.into_iter().map(String::from).collect())
}

fn make_generator(cfg: &PipelineConfig, dict: Arc<AttributeDictionary>) -> Result<Generator, PipelineError> {
    Ok(match cfg.generation.provider {
        GeneratorKind::Stub => Generator::Stub(StubGenerator::new(dict, cfg.generation.fault, cfg.prompt.max_response_words)),
        GeneratorKind::Http => {
            let c = cfg
                .generation
                .http
                .clone()
                .ok_or_else(|| PipelineError::Config("generation.http is required with the http provider".into()))?;
            Generator::Http(ChatClient::new(c).map_err(|e| PipelineError::Config(e.to_string()))?)
        }
    })
}

/// Predict every target encounter under the configured mode.
pub async fn cmd_run(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    let started_at = now();
    cfg.validate()?;
    let mode = cfg.run.mode;
    let dict = Arc::new(load_dictionary(cfg)?);
    let split = target_split(cfg)?;
    let (target, target_report) = load_split(cfg, require(&cfg.paths.target, "target")?, split, &dict)?;
    let train = if mode == RunMode::ZeroShot {
        None
    } else {
        Some(load_split(cfg, require(&cfg.paths.train, "train")?, Split::Train, &dict)?.0)
    };

    let mut spec = prompt_spec(cfg)?;
    let mut few_shot = Vec::new();
    if mode == RunMode::FewShot {
        few_shot = few_shot_ids(cfg, train.as_ref().expect("train loaded"))?;
        spec.fixed_exemplar_ids = few_shot.clone();
    }
    spec.validate()?;
    let retriever = match (&train, mode.is_rag()) {
        (Some(train), true) => Some(build_retriever(cfg, train).await?),
        _ => None,
    };
    let generator = make_generator(cfg, dict.clone())?;
    let retrieval_cfg = cfg.retrieval_config();

    let mut encounters: Vec<&Encounter> = target.iter().collect();
    encounters.sort_by(|a, b| a.encounter_id.cmp(&b.encounter_id));

    let mut failures = Vec::new();
    let mut dropped = 0;
    let mut jobs = Vec::new();
    for enc in &encounters {
        let fail = |stage: &str, e: &dyn std::fmt::Display| RunFailure {
            encounter_id: enc.encounter_id.clone(),
            stage: stage.to_string(),
            error: e.to_string(),
        };
        let messages: Result<Vec<Message>, RunFailure> = match mode {
            RunMode::ZeroShot => Ok(build_zero_shot(enc, &spec, &dict)),
            RunMode::FewShot => {
                let train = train.as_ref().expect("train loaded");
                let exemplars: Vec<&Encounter> = few_shot
                    .iter()
                    .filter(|id| **id != enc.encounter_id)
                    .filter_map(|id| train.get(id))
                    .collect();
                build_few_shot(enc, &exemplars, &spec, &dict).map_err(|e| fail("prompt", &e))
            }
            RunMode::RagText | RunMode::RagMultimodal => {
                let r = retriever.as_ref().expect("retriever built");
                match r.query_vectors(enc).await {
                    Err(e) => Err(fail("embedding", &e)),
                    Ok((q_text, q_images)) => {
                        let exclude: HashSet<String> = [enc.encounter_id.clone()].into();
                        let retrieval_mode_images = if retrieval_cfg.mode == RetrievalMode::Multimodal {
                            q_images.as_slice()
                        } else {
                            &[]
                        };
                        match fused_retrieve(
                            &r.text_index,
                            r.image_index.as_ref(),
                            &q_text,
                            retrieval_mode_images,
                            &retrieval_cfg,
                            &exclude,
                        ) {
                            Err(e) => Err(fail("retrieval", &e)),
                            Ok(hits) => build_rag_prompt(enc, &hits, train.as_ref().expect("train loaded"), &spec, &dict)
                                .map_err(|e| fail("prompt", &e)),
                        }
                    }
                }
            }
        };
        let checked = messages.and_then(|m| check_budget(m, &spec.budget).map_err(|e| fail("budget", &e)));
        match checked {
            Ok((messages, report)) => {
                dropped += report.dropped_exemplars;
                jobs.push(GenerationJob {
                    encounter_id: enc.encounter_id.clone(),
                    messages,
                });
            }
            Err(f) => {
                warn!(encounter_id = %f.encounter_id, stage = %f.stage, "{}", f.error);
                failures.push(f);
            }
        }
    }

    let run_dir = cfg.output_dir().join(cfg.run_id());
    std::fs::create_dir_all(&run_dir).map_err(io_err(&run_dir))?;
    let raw_log_path = run_dir.join("raw.jsonl");
    let mut raw_log = RawLog::open(&raw_log_path).map_err(io_err(&raw_log_path))?;

    let params = cfg.generation.params();
    let opts = ParseOptions {
        max_response_words: cfg.prompt.max_response_words,
        ..ParseOptions::default()
    };
    let results = generate_all(&generator, jobs, &params, cfg.run.concurrency).await;
    let mut preds: Vec<StructuredPrediction> = Vec::with_capacity(results.len());
    for (id, result) in results {
        match result {
            Ok(raw) => {
                raw_log.append(&raw, &now()).map_err(io_err(&raw_log_path))?;
                preds.push(postprocess(&raw, &dict, &opts));
            }
            Err(e) => {
                warn!(encounter_id = %id, "generation failed: {e}");
                failures.push(RunFailure {
                    encounter_id: id,
                    stage: "generation".into(),
                    error: e.to_string(),
                });
            }
        }
    }
    let preds = merge_predictions(preds);
    let predictions_path = run_dir.join("predictions.jsonl");
    write_predictions(&predictions_path, &preds).map_err(io_err(&predictions_path))?;

    let mut parse_status = BTreeMap::new();
    for p in &preds {
        *parse_status.entry(p.parse_status).or_default() += 1;
    }
    failures.sort_by(|a, b| a.encounter_id.cmp(&b.encounter_id));
    let manifest = RunManifest {
        run_id: cfg.run_id(),
        mode,
        config_sha256: cfg.sha256(),
        config: serde_json::to_value(cfg).expect("config serializes"),
        started_at,
        finished_at: now(),
        target_split: split,
        encounters: encounters.len(),
        predictions: preds.len(),
        parse_status,
        failures,
        skipped_records: target_report.errors.len(),
        exemplars_dropped_for_budget: dropped,
        few_shot_exemplars: few_shot,
    };
    let manifest_path = run_dir.join("manifest.json");
    write_file(&manifest_path, &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    info!(
        run_dir = %run_dir.display(),
        predictions = manifest.predictions,
        failures = manifest.failures.len(),
        "run finished"
    );
    Ok(RunSummary {
        run_dir,
        predictions_path,
        raw_log_path,
        manifest,
    })
}

// ------------------------------------------------------------ eval / analyze

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

pub struct EvalOutput {
    pub report: MetricReport,
    pub json_path: PathBuf,
    pub table_path: PathBuf,
}

/// Score a predictions file against the gold corpus; reports are written next to it.
pub fn cmd_eval(cfg: &PipelineConfig, predictions: &Path, gold: Option<&Path>) -> Result<EvalOutput, PipelineError> {
    let dict = load_dictionary(cfg)?;
    let gold_path = match gold {
        Some(g) => g.to_path_buf(),
        None => cfg
            .paths
            .gold
            .clone()
            .or_else(|| cfg.paths.target.clone())
            .ok_or_else(|| PipelineError::Config("no gold corpus (paths.gold or paths.target)".into()))?,
    };
    let (gold, _) = load_split(cfg, &gold_path, target_split(cfg)?, &dict)?;
    let preds = read_predictions(predictions)?;
    let report = evaluate_run(&preds, &gold, &cfg.evaluation)?;
    let json_path = sibling(predictions, "report.json");
    let table_path = sibling(predictions, "report.txt");
    let system = predictions
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    write_file(&json_path, &report.to_json())?;
    write_file(&table_path, &report.render_table(&system))?;
    Ok(EvalOutput {
        report,
        json_path,
        table_path,
    })
}

pub struct AnalyzeOutput {
    pub report: AnalysisReport,
    pub json_path: PathBuf,
    pub text_path: PathBuf,
}

/// Gold-free error analysis of a predictions file against its query corpus.
pub fn cmd_analyze(
    cfg: &PipelineConfig,
    predictions: &Path,
    corpus: Option<&Path>,
) -> Result<AnalyzeOutput, PipelineError> {
    let dict = load_dictionary(cfg)?;
    let lex = load_lexicons(cfg)?;
    let corpus_path = match corpus {
        Some(c) => c.to_path_buf(),
        None => require(&cfg.paths.target, "target")?.to_path_buf(),
    };
    let (corpus, _) = load_split(cfg, &corpus_path, target_split(cfg)?, &dict)?;
    let preds = read_predictions(predictions)?;
    let report = analyze(&preds, &corpus, &dict, &lex);
    let json_path = sibling(predictions, "analysis.json");
    let text_path = sibling(predictions, "analysis.txt");
    write_file(&json_path, &report.to_json())?;
    write_file(&text_path, &report.render_text())?;
    Ok(AnalyzeOutput {
        report,
        json_path,
        text_path,
    })
}

/// Convert a shared-task release file into the corpus JSON-lines format.
pub fn cmd_convert(input: &Path, output: &Path, image_prefix: &str) -> Result<usize, PipelineError> {
    let text = std::fs::read_to_string(input).map_err(io_err(input))?;
    let records = convert_release(&text, image_prefix)?;
    let mut out = String::new();
    for r in &records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    write_file(output, &out)?;
    Ok(records.len())
}
