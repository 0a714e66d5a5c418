//! Shared plumbing for commands that run the pipeline over a dataset.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::Context;
use sha2::{Digest, Sha256};

use clinsv_core::backend::Backend;
use clinsv_core::data::{load_dataset, write_results, Dataset, RunManifest, RESULTS_SCHEMA_VERSION};
use clinsv_core::evaluation::{evaluate_corpus, EvalOptions, GoldAnnotation};
use clinsv_core::pipeline::{run_batch, BatchMode, DocOutcome, Pipeline, PipelineResult, StepSelection};
use clinsv_core::prompts::{sample_demonstrations, PromptCatalog};
use clinsv_core::{is_long_input, Document};

use crate::exit::{fail, Classify, CliResult, Exit};
use crate::settings::Settings;

pub struct Prepared {
    pub settings: Settings,
    pub data: Dataset,
    pub docs: Vec<Document>,
    pub gold: Vec<GoldAnnotation>,
    pub catalog: PromptCatalog,
    pub dataset_sha256: String,
    pub long_input: bool,
}

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

/// Seeded subset: rank documents by a hash of (seed, id) and keep the first
/// `limit`. Without a seed the first `limit` ids are kept.
fn select(mut docs: Vec<Document>, limit: Option<usize>, seed: Option<u64>) -> Vec<Document> {
    let Some(limit) = limit.filter(|&l| l < docs.len()) else { return docs };
    if let Some(seed) = seed {
        docs.sort_by_cached_key(|d| Sha256::new().chain_update(seed.to_le_bytes()).chain_update(d.id.as_bytes()).finalize().to_vec());
    }
    docs.truncate(limit);
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    docs
}

pub fn prepare(settings: Settings) -> CliResult<Prepared> {
    let path = &settings.dataset;
    let bytes = std::fs::read(path).with_context(|| format!("reading dataset {}", path.display())).or_exit(Exit::Dataset)?;
    let data = load_dataset(path, settings.task, settings.lenient).or_exit(Exit::Dataset)?;
    for (line, reason) in &data.skipped {
        eprintln!("warning: skipped dataset line {line}: {reason}");
    }
    let mut docs: Vec<Document> = data.eval_records().map(|r| r.document()).collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let docs = select(docs, settings.limit, settings.subset_seed);
    if docs.is_empty() {
        return fail(Exit::Dataset, format!("{} has no documents to evaluate", path.display()));
    }
    let gold = data.gold();
    let catalog = match &settings.prompts_dir {
        Some(dir) => PromptCatalog::load_dir(dir).or_exit(Exit::Config)?,
        None => PromptCatalog::builtin(),
    };
    let long_input = settings.task.default_long_input() || is_long_input(docs.iter().map(|d| d.text.as_str()));
    Ok(Prepared { settings, data, docs, gold, catalog, dataset_sha256: hex::encode(Sha256::digest(&bytes)), long_input })
}

pub fn default_run_id(p: &Prepared, steps: &StepSelection) -> String {
    let steps = if p.settings.megaprompt { "megaprompt".to_string() } else { steps.to_string().replace(',', "+") };
    format!("{}-{}-{}", p.settings.task, steps, now_ms())
}

pub struct RunSummary {
    pub run_dir: PathBuf,
    pub outcomes: Vec<DocOutcome>,
    pub manifest: RunManifest,
}

impl RunSummary {
    pub fn results(&self) -> Vec<PipelineResult> {
        self.outcomes.iter().filter_map(|o| o.result().cloned()).collect()
    }
}

/// Run one configuration and seed over the prepared documents, then write
/// the run folder `<out_dir>/<run_id>`.
pub fn run_one(p: &Prepared, backend: &dyn Backend, steps: &StepSelection, seed: u64, out_dir: &Path, run_id: &str, quiet: bool) -> CliResult<RunSummary> {
    let s = &p.settings;
    let config = s.pipeline_config(p.long_input, seed, steps)?;
    let demos = sample_demonstrations(&p.data.demo_pool(), config.demonstrations_k, seed).or_exit(Exit::Dataset)?;
    let pipeline = Pipeline::with_demonstrations(backend, &p.catalog, config.clone(), &demos).or_exit(Exit::Config)?;
    let mode = if s.megaprompt { BatchMode::MegaPrompt } else { BatchMode::Pipeline };

    let started = now_ms();
    let done = AtomicUsize::new(0);
    let total = p.docs.len();
    let progress = |o: &DocOutcome| {
        let n = done.fetch_add(1, Ordering::SeqCst) + 1;
        if quiet {
            return;
        }
        match o {
            DocOutcome::Ok(r) => eprintln!("[{n}/{total}] {} ok: {} kept, {} pruned", r.doc_id, r.final_items.len(), r.pruned_items.len()),
            DocOutcome::Failed(f) => eprintln!("[{n}/{total}] {} FAILED: {}", f.doc_id, f.error),
        }
    };
    let mut outcomes = run_batch(&pipeline, &p.docs, s.workers, mode, &progress);
    outcomes.sort_by(|a, b| a.doc_id().cmp(b.doc_id()));

    let results: Vec<PipelineResult> = outcomes.iter().filter_map(|o| o.result().cloned()).collect();
    let metrics = evaluate_corpus(&results, &p.gold, &EvalOptions::default()).ok().map(|r| r.macro_metrics);
    let manifest = RunManifest {
        schema_version: RESULTS_SCHEMA_VERSION,
        run_id: run_id.to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        batch_mode: mode,
        prompt_catalog_version: p.catalog.version().to_string(),
        prompt_catalog_digest: p.catalog.digest().to_string(),
        backend: backend.identity(),
        seeds: vec![seed],
        demonstrations: demos,
        dataset_path: s.dataset.display().to_string(),
        dataset_sha256: p.dataset_sha256.clone(),
        subset_seed: s.limit.and(s.subset_seed),
        doc_ids: p.docs.iter().map(|d| d.id.clone()).collect(),
        started_at_ms: started,
        finished_at_ms: now_ms(),
        documents: total,
        failures: total - results.len(),
        traces_included: s.traces,
        metrics,
    };
    let run_dir = write_results(&outcomes, &manifest, out_dir).or_exit(Exit::Io)?;
    Ok(RunSummary { run_dir, outcomes, manifest })
}

/// One summary line per run.
pub fn describe(r: &RunSummary) -> String {
    let results = r.results();
    let calls: usize = results.iter().map(PipelineResult::llm_calls).sum();
    let kept: usize = results.iter().map(|x| x.final_items.len()).sum();
    let pruned: usize = results.iter().map(|x| x.pruned_items.len()).sum();
    let mut line = format!(
        "{}: {} documents, {} failed, {calls} calls, {kept} items kept, {pruned} pruned",
        r.run_dir.display(),
        r.manifest.documents,
        r.manifest.failures
    );
    if let Some(m) = &r.manifest.metrics {
        line.push_str(&format!("; P {:.4} R {:.4} F1 {:.4}", m.precision, m.recall, m.f1));
    }
    line
}

/// Every document failing means the backend is unusable.
pub fn check_backend(r: &RunSummary) -> CliResult {
    if r.manifest.documents > 0 && r.manifest.failures == r.manifest.documents {
        let first = r.outcomes.iter().find_map(|o| match o {
            DocOutcome::Failed(f) => Some(f.error.clone()),
            DocOutcome::Ok(_) => None,
        });
        return fail(Exit::Backend, format!("all {} documents failed; first error: {}", r.manifest.documents, first.unwrap_or_default()));
    }
    Ok(())
}
