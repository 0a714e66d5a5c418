use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Subcommand};

use clinsv_core::backend::{read_records, write_store, BackendError, ResponseStore};
use clinsv_core::data::{emit_report, load_dataset, read_results, ReportOptions};
use clinsv_core::evaluation::{ablation_table, evaluate_corpus, AblationRun, EvalError, EvalOptions, MatchOn};
use clinsv_core::pipeline::{BatchMode, PipelineResult, StepSelection};
use clinsv_core::{ExtractionSet, TaskKind};

use crate::backends::{self, stats_path, LastRunStats};
use crate::exit::{fail, Classify, CliResult, Exit};
use crate::runner::{check_backend, default_run_id, describe, prepare, run_one};
use crate::settings::{RunArgs, Settings};

pub fn extract(args: &RunArgs) -> CliResult {
    let settings = Settings::resolve(args)?;
    let built = backends::build(&settings)?;
    let p = prepare(settings)?;
    let s = &p.settings;
    let base_id = s.run_id.clone().unwrap_or_else(|| default_run_id(&p, &s.steps));
    let mut summaries = Vec::new();
    for &seed in &s.seeds {
        let run_id = if s.seeds.len() == 1 { base_id.clone() } else { format!("{base_id}-seed{seed}") };
        let summary = run_one(&p, built.backend(), &s.steps, seed, &s.out, &run_id, false)?;
        println!("{}", describe(&summary));
        summaries.push(summary);
    }
    built.save_stats()?;
    summaries.iter().try_for_each(check_backend)
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run folders written by `extract`; several runs are averaged with SEM.
    #[arg(required = true)]
    pub runs: Vec<PathBuf>,
    /// Gold dataset [default: the dataset recorded in the first manifest].
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    /// Require medication status to match as well as the name.
    #[arg(long)]
    pub match_status: bool,
    /// Restrict ICD scoring to the N most frequent gold codes.
    #[arg(long, default_value_t = clinsv_core::evaluation::DEFAULT_TOP_K_CODES)]
    pub top_k: usize,
    /// Score every ICD code.
    #[arg(long, conflicts_with = "top_k")]
    pub no_code_filter: bool,
    /// Score the item set before pruning (kept plus pruned items).
    #[arg(long)]
    pub before_prune: bool,
    /// Skip malformed gold lines.
    #[arg(long)]
    pub lenient: bool,
    /// Write the full report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Print per-document TSV instead of the summary.
    #[arg(long)]
    pub tsv: bool,
}

fn eval_error(e: EvalError) -> crate::exit::CliError {
    crate::exit::CliError { kind: Exit::Evaluation, error: e.into() }
}

fn unprune(mut r: PipelineResult) -> PipelineResult {
    let restored = r.pruned_items.drain(..).map(|mut i| {
        i.pruned = false;
        i
    });
    r.final_items = ExtractionSet::from_items(r.final_items.into_items().into_iter().chain(restored));
    r
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult {
    let mut runs = Vec::new();
    for dir in &args.runs {
        let (manifest, outcomes) = read_results(dir).with_context(|| format!("reading run {}", dir.display())).or_exit(Exit::Io)?;
        runs.push((manifest, outcomes));
    }
    let first = &runs[0].0;
    let task: TaskKind = match &args.task {
        Some(t) => t.parse().or_exit(Exit::Config)?,
        None => first.config.task,
    };
    let dataset = args.dataset.clone().unwrap_or_else(|| PathBuf::from(&first.dataset_path));
    let gold = load_dataset(&dataset, task, args.lenient).or_exit(Exit::Dataset)?.gold();
    let options = EvalOptions {
        match_on: if args.match_status { MatchOn::ValueAndStatus } else { MatchOn::Value },
        top_k_codes: (!args.no_code_filter).then_some(args.top_k),
    };

    let mut labelled = Vec::new();
    for (m, outcomes) in &runs {
        if m.config.task != task {
            return fail(Exit::Evaluation, format!("run {} is for task {}, not {task}", m.run_id, m.config.task));
        }
        let failed = outcomes.iter().filter(|o| o.result().is_none()).count();
        if failed > 0 {
            eprintln!("warning: run {} has {failed} failed document(s); they are excluded", m.run_id);
        }
        let results: Vec<PipelineResult> =
            outcomes.iter().filter_map(|o| o.result().cloned()).map(|r| if args.before_prune { unprune(r) } else { r }).collect();
        let row = match m.batch_mode {
            BatchMode::MegaPrompt => "megaprompt".to_string(),
            BatchMode::Pipeline => m.config.steps.to_string(),
        };
        labelled.push(AblationRun { row, seed: m.seeds.first().copied().unwrap_or(0), results });
    }

    if labelled.len() == 1 {
        let report = evaluate_corpus(&labelled[0].results, &gold, &options).map_err(eval_error)?;
        if args.tsv {
            print!("{}", report.render_tsv());
        } else {
            print!("{}", report.render_text());
        }
        if let Some(path) = &args.json {
            let json = serde_json::to_string_pretty(&report).context("serializing report")?;
            std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
        return Ok(());
    }
    let table = ablation_table(task.name(), &labelled, &gold, &options).map_err(eval_error)?;
    if args.tsv {
        print!("{}", table.render_tsv());
    } else {
        print!("{}", table.render_text());
    }
    if let Some(path) = &args.json {
        let json = serde_json::to_string_pretty(&table).context("serializing table")?;
        std::fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn ablate(args: &RunArgs) -> CliResult {
    let settings = Settings::resolve(args)?;
    if settings.megaprompt {
        return fail(Exit::Config, "--megaprompt is a single configuration; use `extract` for it");
    }
    let built = backends::build(&settings)?;
    let p = prepare(settings)?;
    let s = &p.settings;
    let base_id = s.run_id.clone().unwrap_or_else(|| format!("{}-ablation-{}", s.task, crate::runner::now_ms()));
    let out_dir = s.out.join(&base_id);
    if out_dir.exists() {
        return fail(Exit::Io, format!("run `{base_id}` already exists; choose another run id"));
    }
    let mut runs = Vec::new();
    for (name, steps) in StepSelection::ablation_rows() {
        let slug = name.trim_start_matches("+ ").to_lowercase().replace(' ', "-");
        for &seed in &s.seeds {
            let summary = run_one(&p, built.backend(), &steps, seed, &out_dir, &format!("{slug}-seed{seed}"), true)?;
            eprintln!("{}", describe(&summary));
            check_backend(&summary)?;
            runs.push(AblationRun { row: name.to_string(), seed, results: summary.results() });
        }
    }
    built.save_stats()?;
    let table = ablation_table(s.task.name(), &runs, &p.gold, &EvalOptions::default()).map_err(eval_error)?;
    std::fs::write(out_dir.join("ablation.tsv"), table.render_tsv()).context("writing ablation.tsv")?;
    print!("{}", table.render_text());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run folder written by `extract`.
    pub run: PathBuf,
    /// Dataset with the source texts [default: the one in the manifest].
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output HTML file [default: <run>/report.html].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Show pruned items struck through, with their evidence and reason.
    #[arg(long)]
    pub include_pruned: bool,
    #[arg(long, default_value = "Extraction audit")]
    pub title: String,
}

pub fn report(args: &ReportArgs) -> CliResult {
    let (manifest, outcomes) = read_results(&args.run).with_context(|| format!("reading run {}", args.run.display())).or_exit(Exit::Io)?;
    let dataset = args.dataset.clone().unwrap_or_else(|| PathBuf::from(&manifest.dataset_path));
    let data = load_dataset(&dataset, manifest.config.task, true).or_exit(Exit::Dataset)?;
    let texts: HashMap<&str, &str> = data.records.iter().map(|r| (r.doc_id.as_str(), r.text.as_str())).collect();
    let out = args.out.clone().unwrap_or_else(|| args.run.join("report.html"));
    let opts = ReportOptions { title: args.title.clone(), run_id: manifest.run_id.clone(), include_pruned: args.include_pruned };
    emit_report(&outcomes, |id| texts.get(id).copied(), &opts, &out).or_exit(Exit::Io)?;
    println!("{}", out.display());
    Ok(())
}

#[derive(Debug, Subcommand)]
pub enum CacheCommand {
    /// Entry count, size, and hit rate of the last caching run.
    Stats {
        #[arg(long)]
        cache: PathBuf,
    },
    /// Delete the store.
    Purge {
        #[arg(long)]
        cache: PathBuf,
    },
    /// Copy every entry to a new replay store file.
    Export {
        #[arg(long)]
        cache: PathBuf,
        to: PathBuf,
    },
    /// Add the entries of another store; existing keys are kept.
    Import {
        #[arg(long)]
        cache: PathBuf,
        from: PathBuf,
    },
}

fn store_error(e: BackendError) -> crate::exit::CliError {
    crate::exit::CliError { kind: Exit::Backend, error: e.into() }
}

pub fn cache(cmd: &CacheCommand) -> CliResult {
    match cmd {
        CacheCommand::Stats { cache } => {
            let (entries, bytes) = if cache.exists() {
                (read_records(cache).map_err(store_error)?.len(), std::fs::metadata(cache).context("reading store size")?.len())
            } else {
                (0, 0)
            };
            println!("entries  {entries}\nbytes    {bytes}");
            if let Ok(text) = std::fs::read_to_string(stats_path(cache)) {
                let last: LastRunStats = serde_json::from_str(&text).context("parsing stats file")?;
                let s = last.stats;
                println!("last run hits {} misses {} writes {} hit rate {:.3}", s.hits, s.misses, s.writes, s.hit_rate());
            }
        }
        CacheCommand::Purge { cache } => {
            for p in [cache.clone(), stats_path(cache)] {
                if p.exists() {
                    std::fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
                }
            }
            println!("purged {}", cache.display());
        }
        CacheCommand::Export { cache, to } => {
            if to.exists() {
                return fail(Exit::Io, format!("{} already exists", to.display()));
            }
            let records = read_records(cache).map_err(store_error)?;
            let n = write_store(to, &records).map_err(store_error)?;
            println!("exported {n} entries to {}", to.display());
        }
        CacheCommand::Import { cache, from } => {
            let records = read_records(from).map_err(store_error)?;
            let store = ResponseStore::open(cache).map_err(store_error)?;
            let mut added = 0;
            for r in records {
                added += usize::from(store.put(r.key, r.response).map_err(store_error)?);
            }
            println!("imported {added} new entries into {}", cache.display());
        }
    }
    Ok(())
}
