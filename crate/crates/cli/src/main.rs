use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use woundrag::pipeline::{self, Overrides, PipelineConfig, RunMode};

#[derive(Parser)]
#[command(name = "woundrag", version, about = "Wound-care visual question answering pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// zero_shot, few_shot, rag_text or rag_multimodal.
    #[arg(long)]
    mode: Option<RunMode>,
    /// Text weight of the fused retrieval score.
    #[arg(long)]
    alpha: Option<f64>,
    /// Number of exemplars retrieved per query.
    #[arg(long)]
    k: Option<usize>,
    /// Output directory (runs are written to <out>/<run-id>/).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    run_id: Option<String>,
}

impl Common {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        cfg.apply(&Overrides {
            mode: self.mode,
            alpha: self.alpha,
            k: self.k,
            out: self.out.clone(),
            run_id: self.run_id.clone(),
        });
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and canonicalize the configured corpora and write statistics.
    Ingest(Common),
    /// Check vector stores for coverage, dimension and normalization.
    EmbedCheck(Common),
    /// Generate predictions for the target split.
    Run(Common),
    /// Score a predictions file against gold references.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Gold-free error analysis of a predictions file.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
        /// Query corpus; defaults to paths.target.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Convert a shared-task release file into corpus JSON lines.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "")]
        image_prefix: String,
    },
}

/// Returns whether every check passed; `Err` is a fatal error.
async fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest(common) => {
            let summary = pipeline::cmd_ingest(&common.config()?)?;
            for c in &summary.corpora {
                println!(
                    "{}: {} encounters, {} images, {} corrections, {} bad records -> {}",
                    c.role,
                    c.stats.encounters,
                    c.stats.images,
                    c.corrections,
                    c.errors.len(),
                    c.stats_file.display()
                );
                for e in &c.errors {
                    let id = e.encounter_id.as_deref().unwrap_or("?");
                    println!("  line {} ({id}): {}", e.line, e.reason);
                }
            }
            Ok(summary.is_clean())
        }
        Command::EmbedCheck(common) => {
            let report = pipeline::cmd_embed_check(&common.config()?)?;
            for s in &report.stores {
                let verdict = if s.passed() { "ok" } else { "FAIL" };
                println!(
                    "{verdict} {} ({:?}, dim {} expected {}, {} vectors)",
                    s.path.display(),
                    s.modality,
                    s.dim,
                    s.expected_dim,
                    s.entries
                );
                for m in &s.missing {
                    println!("  missing {m}");
                }
                for n in &s.non_unit {
                    println!("  not unit-norm {n}");
                }
            }
            Ok(report.passed())
        }
        Command::Run(common) => {
            let summary = pipeline::cmd_run(&common.config()?).await?;
            let m = &summary.manifest;
            println!(
                "{}: {} encounters, {} predictions, {} failures -> {}",
                m.run_id,
                m.encounters,
                m.predictions,
                m.failures.len(),
                summary.predictions_path.display()
            );
            for (status, n) in &m.parse_status {
                println!("  {status:?}: {n}");
            }
            for f in &m.failures {
                println!("  failed {} at {}: {}", f.encounter_id, f.stage, f.error);
            }
            Ok(true)
        }
        Command::Eval {
            common,
            predictions,
            gold,
        } => {
            let out = pipeline::cmd_eval(&common.config()?, &predictions, gold.as_deref())?;
            let table = std::fs::read_to_string(&out.table_path)
                .with_context(|| format!("reading {}", out.table_path.display()))?;
            print!("{table}");
            println!("report: {}", out.json_path.display());
            Ok(true)
        }
        Command::Analyze {
            common,
            predictions,
            corpus,
        } => {
            let out = pipeline::cmd_analyze(&common.config()?, &predictions, corpus.as_deref())?;
            print!("{}", out.report.render_text());
            println!("report: {}", out.json_path.display());
            Ok(true)
        }
        Command::Convert {
            input,
            output,
            image_prefix,
        } => {
            let n = pipeline::cmd_convert(&input, &output, &image_prefix)?;
            println!("{n} encounters -> {}", output.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("WOUNDRAG_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(2);
        }
    };
    match runtime.block_on(execute(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
