mod common;

use std::path::Path;

use common::Fixture;
use woundrag::corpus::{load_corpus, AttributeDictionary, Split};
use woundrag::embedding::{save_vector_store, MockProvider, Modality, Vector, VectorStore};
use woundrag::pipeline::{
    cmd_analyze, cmd_convert, cmd_embed_check, cmd_eval, cmd_ingest, cmd_run, PipelineConfig, PipelineError, RunMode,
};
use woundrag::postprocess::{read_predictions, write_predictions, ParseStatus, StructuredPrediction};

fn config(fx: &Fixture, extra: &str) -> PipelineConfig {
    PipelineConfig::load(&fx.config(extra)).unwrap()
}

fn with_mode(mut cfg: PipelineConfig, mode: RunMode, run_id: &str) -> PipelineConfig {
    cfg.run.mode = mode;
    cfg.run.run_id = Some(run_id.to_string());
    cfg
}

#[tokio::test]
async fn every_mode_produces_a_full_deterministic_run() {
    let fx = Fixture::new(30, 12, 7);
    let base = config(&fx, "[run]\nconcurrency = 3\n");
    for mode in RunMode::ALL {
        let a = cmd_run(&with_mode(base.clone(), mode, &format!("{mode}_a"))).await.unwrap();
        let b = cmd_run(&with_mode(base.clone(), mode, &format!("{mode}_b"))).await.unwrap();
        assert_eq!(a.manifest.predictions, 12, "{mode}");
        assert!(a.manifest.failures.is_empty(), "{mode}: {:?}", a.manifest.failures);
        let pa = std::fs::read(&a.predictions_path).unwrap();
        let pb = std::fs::read(&b.predictions_path).unwrap();
        assert!(pa == pb, "{mode} predictions differ between runs");
        assert!(a.raw_log_path.exists());
        assert!(a.run_dir.join("manifest.json").exists());
        assert_eq!(a.manifest.config_sha256.len(), 64);
    }
}

#[tokio::test]
async fn manifest_records_mode_and_config_hash() {
    let fx = Fixture::new(20, 5, 3);
    let base = config(&fx, "");
    let zero = cmd_run(&with_mode(base.clone(), RunMode::ZeroShot, "z")).await.unwrap();
    let rag = cmd_run(&with_mode(base, RunMode::RagMultimodal, "r")).await.unwrap();
    assert_ne!(zero.manifest.config_sha256, rag.manifest.config_sha256);
    let text = std::fs::read_to_string(rag.run_dir.join("manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(m["mode"], "rag_multimodal");
    assert_eq!(m["config"]["run"]["mode"], "rag_multimodal");
    assert!(m["started_at"].as_str().unwrap() <= m["finished_at"].as_str().unwrap());
    let raw = std::fs::read_to_string(&rag.raw_log_path).unwrap();
    assert_eq!(raw.lines().count(), 5);
}

#[tokio::test]
async fn zero_shot_needs_no_train_corpus_or_index() {
    let fx = Fixture::new(3, 4, 1);
    let mut cfg = with_mode(config(&fx, ""), RunMode::ZeroShot, "z");
    cfg.paths.train = None;
    let run = cmd_run(&cfg).await.unwrap();
    assert_eq!(run.manifest.predictions, 4);
}

#[tokio::test]
async fn rag_from_files_without_stores_is_a_config_error() {
    let fx = Fixture::new(5, 2, 1);
    let cfg = config(&fx, "[embedding]\nprovider = \"file\"\n");
    let err = cmd_run(&cfg).await.unwrap_err();
    assert!(matches!(err, PipelineError::Config(_)), "{err}");
}

#[tokio::test]
async fn rag_from_precomputed_stores() {
    let fx = Fixture::new(10, 4, 9);
    let (text, image) = write_mock_stores(&fx, 32, 16, None);
    let mut cfg = config(&fx, "[embedding]\nprovider = \"file\"\ntext_dim = 32\nimage_dim = 16\n");
    cfg.paths.text_store = Some(text);
    cfg.paths.image_store = Some(image);
    let run = cmd_run(&cfg).await.unwrap();
    assert_eq!(run.manifest.predictions, 4);
    assert!(run.manifest.failures.is_empty(), "{:?}", run.manifest.failures);
}

#[tokio::test]
async fn fault_modes_are_recovered_or_failed_but_never_abort() {
    let fx = Fixture::new(6, 5, 2);
    for (fault, status) in [
        ("wrap_in_fences", ParseStatus::Recovered),
        ("prepend_prose", ParseStatus::Recovered),
        ("empty", ParseStatus::Failed),
    ] {
        let cfg = with_mode(
            config(&fx, &format!("[generation]\nfault = \"{fault}\"\n")),
            RunMode::ZeroShot,
            fault,
        );
        let run = cmd_run(&cfg).await.unwrap();
        assert_eq!(run.manifest.predictions, 5);
        let preds = read_predictions(&run.predictions_path).unwrap();
        assert!(preds.iter().all(|p| p.parse_status == status), "{fault}");
    }
}

#[test]
fn ingest_writes_stats_and_reports_bad_records() {
    let fx = Fixture::new(4, 3, 5);
    let summary = cmd_ingest(&config(&fx, "")).unwrap();
    assert!(summary.is_clean());
    assert_eq!(summary.corpora.len(), 2);
    for c in &summary.corpora {
        assert!(c.stats_file.exists());
    }
    assert_eq!(summary.corpora[0].stats.encounters, 4);

    let mut text = std::fs::read_to_string(&fx.train).unwrap();
    text.push_str("{not json\n");
    std::fs::write(&fx.train, text).unwrap();
    let summary = cmd_ingest(&config(&fx, "")).unwrap();
    assert!(!summary.is_clean());
    assert_eq!(summary.corpora[0].errors.len(), 1);
}

/// Mock-embedded stores over train and test; `skip` leaves one encounter's text vector out.
fn write_mock_stores(fx: &Fixture, text_dim: usize, image_dim: usize, skip: Option<&str>) -> (std::path::PathBuf, std::path::PathBuf) {
    let dict = AttributeDictionary::builtin();
    let t = MockProvider::new(Modality::Text, text_dim);
    let i = MockProvider::new(Modality::Image, image_dim);
    let mut text = VectorStore::new(Modality::Text, text_dim, "mock");
    let mut image = VectorStore::new(Modality::Image, image_dim, "mock");
    for (path, split) in [(&fx.train, Split::Train), (&fx.test, Split::Test)] {
        let (corpus, _) = load_corpus(path, split, &fx.images, &dict).unwrap();
        for enc in corpus.iter() {
            if Some(enc.encounter_id.as_str()) != skip {
                text.push(&enc.encounter_id, 0, t.embed_bytes(enc.query_en().as_bytes())).unwrap();
            }
            for (n, img) in enc.images.iter().enumerate() {
                let bytes = std::fs::read(&img.path).unwrap();
                image.push(&enc.encounter_id, n, i.embed_bytes(&bytes)).unwrap();
            }
        }
    }
    let tp = fx.path().join("text_store.json");
    let ip = fx.path().join("image_store.json");
    save_vector_store(&text, &tp).unwrap();
    save_vector_store(&image, &ip).unwrap();
    (tp, ip)
}

#[test]
fn embed_check_coverage_and_dims() {
    let fx = Fixture::new(5, 3, 11);
    let (text, image) = write_mock_stores(&fx, 32, 16, None);
    let mut cfg = config(&fx, "[embedding]\ntext_dim = 32\nimage_dim = 16\n");
    cfg.paths.text_store = Some(text.clone());
    cfg.paths.image_store = Some(image);
    let report = cmd_embed_check(&cfg).unwrap();
    assert_eq!(report.stores.len(), 2);
    assert!(report.passed(), "{report:?}");

    cfg.embedding.text_dim = 64;
    let report = cmd_embed_check(&cfg).unwrap();
    assert!(!report.passed());
    assert!(!report.stores[0].passed() && report.stores[1].passed());

    write_mock_stores(&fx, 32, 16, Some("test001"));
    cfg.embedding.text_dim = 32;
    let report = cmd_embed_check(&cfg).unwrap();
    assert!(!report.passed());
    assert_eq!(report.stores[0].missing, ["test001"]);
}

#[test]
fn embed_check_without_stores_is_an_error() {
    let fx = Fixture::new(2, 2, 1);
    assert!(matches!(cmd_embed_check(&config(&fx, "")), Err(PipelineError::Config(_))));
}

fn gold_predictions(path: &Path, images: &Path) -> Vec<StructuredPrediction> {
    let (corpus, _) = load_corpus(path, Split::Test, images, &AttributeDictionary::builtin()).unwrap();
    corpus
        .iter()
        .map(|e| StructuredPrediction {
            attributes: e.gold_attributes.clone().unwrap_or_default(),
            response_en: e.reference_responses_en[0].clone(),
            parse_status: ParseStatus::Ok,
            ..StructuredPrediction::failed(&e.encounter_id)
        })
        .collect()
}

#[test]
fn eval_identity_and_empty_predictions() {
    let fx = Fixture::new(2, 6, 4);
    let cfg = config(&fx, "");
    let preds_path = fx.path().join("gold_run/predictions.jsonl");
    std::fs::create_dir_all(preds_path.parent().unwrap()).unwrap();
    write_predictions(&preds_path, &gold_predictions(&fx.test, &fx.images)).unwrap();
    let out = cmd_eval(&cfg, &preds_path, None).unwrap();
    let a = &out.report.averages;
    for v in [a.dbleu, a.r1, a.r2, a.rl, a.rlsum] {
        assert!((v - 100.0).abs() < 1e-9 || (v - 1.0).abs() < 1e-9, "{v}");
    }
    assert!(out.json_path.exists() && out.table_path.exists());

    let empty_path = fx.path().join("empty_run/predictions.jsonl");
    std::fs::create_dir_all(empty_path.parent().unwrap()).unwrap();
    write_predictions(&empty_path, &[]).unwrap();
    let out = cmd_eval(&cfg, &empty_path, None).unwrap();
    let a = &out.report.averages;
    assert_eq!([a.dbleu, a.r1, a.r2, a.rl, a.rlsum], [0.0; 5]);
    assert_eq!(out.report.missing_predictions.len(), 6);
}

#[test]
fn analyze_empty_and_valid_predictions() {
    let fx = Fixture::new(2, 5, 8);
    let cfg = config(&fx, "");
    let path = fx.path().join("a/predictions.jsonl");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    let empty: Vec<_> = (0..5).map(|i| StructuredPrediction::failed(&format!("test{i:03}"))).collect();
    write_predictions(&path, &empty).unwrap();
    let out = cmd_analyze(&cfg, &path, None).unwrap();
    assert_eq!(out.report.genericness.empty_count, 5);
    assert!(out.json_path.exists() && out.text_path.exists());

    write_predictions(&path, &gold_predictions(&fx.test, &fx.images)).unwrap();
    let out = cmd_analyze(&cfg, &path, None).unwrap();
    assert!(out.report.oov.values().all(|o| o.count == 0));
}

#[test]
fn convert_release_array() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("release.json");
    std::fs::write(
        &input,
        r#"[{"encounter_id": "ENC1", "image_ids": ["a.jpg"], "query_title_en": "t", "query_content_en": "c",
            "responses": [{"content_en": "Keep it clean.", "content_zh": "保持清洁。"}],
            "anatomic_locations": ["sole"], "wound_type": "diabetic"}]"#,
    )
    .unwrap();
    let output = dir.path().join("out.jsonl");
    assert_eq!(cmd_convert(&input, &output, "imgs/").unwrap(), 1);
    let line = std::fs::read_to_string(&output).unwrap();
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["images"][0], "imgs/a.jpg");
    assert_eq!(v["reference_responses_en"][0], "Keep it clean.");
}

#[test]
fn store_round_trip_preserves_vectors_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let mut store = VectorStore::new(Modality::Text, 3, "enc");
    let v = woundrag::embedding::l2_normalize(&Vector::new(vec![0.1, 0.2, 0.3])).unwrap();
    store.push("a", 0, v.clone()).unwrap();
    let path = dir.path().join("s.json");
    save_vector_store(&store, &path).unwrap();
    let back = woundrag::embedding::load_vector_store(&path).unwrap();
    assert_eq!(back.get("a", 0), Some(&v));
    assert_eq!(back.encoder_name(), "enc");
}
