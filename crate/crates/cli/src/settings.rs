//! Run settings: an optional TOML file, overridden by command-line flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::Deserialize;

use clinsv_core::backend::Mode;
use clinsv_core::pipeline::{PipelineConfig, PruneMode, StepSelection};
use clinsv_core::TaskKind;

use crate::exit::{fail, Classify, CliResult, Exit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    /// OpenAI-compatible endpoint.
    Http,
    /// Scripted responses from `--script`.
    Mock,
    /// Serve responses from the `--cache` store only.
    Replay,
    /// Call through (http, or mock when `--script` is set) and save to `--cache`.
    Record,
}

/// Keys accepted in a `--config` file. Every key is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub task: Option<String>,
    pub dataset: Option<PathBuf>,
    pub backend: Option<BackendKind>,
    pub script: Option<PathBuf>,
    pub steps: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub no_traces: Option<bool>,
    pub lenient: Option<bool>,
    pub run_id: Option<String>,
    pub model: Option<String>,
    pub api_base: Option<String>,
    pub api_key_env: Option<String>,
    pub auth_header: Option<String>,
    pub timeout_secs: Option<u64>,
    pub max_attempts: Option<u32>,
    pub mode: Option<Mode>,
    pub temperature: Option<f64>,
    pub max_tokens_extract: Option<u32>,
    pub max_tokens_verdict: Option<u32>,
    pub omission_min_iters: Option<u32>,
    pub omission_max_iters: Option<u32>,
    pub demonstrations_k: Option<usize>,
    pub prune_mode: Option<PruneMode>,
    pub fuzzy_threshold: Option<f64>,
    pub map_icd: Option<bool>,
    pub megaprompt: Option<bool>,
    pub prompts_dir: Option<PathBuf>,
    pub limit: Option<usize>,
    pub subset_seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display())).or_exit(Exit::Config)?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display())).or_exit(Exit::Config)?;
        // Paths in a config file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.script, &mut cfg.out, &mut cfg.cache, &mut cfg.prompts_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flags shared by commands that run the pipeline.
#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Dataset file (JSON lines).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Task: clinical_trial_arm, medication_status, icd9 or icd10.
    #[arg(long)]
    pub task: Option<String>,
    /// TOML config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// Mock response script (see docs/formats.md).
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Comma-separated optional steps (omission, evidence, prune), `full`, or `original`.
    #[arg(long)]
    pub steps: Option<String>,
    /// Comma-separated seeds for demonstration sampling.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Documents processed in parallel [default: 4].
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for run folders [default: runs].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Response store used by replay, record and caching.
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Omit per-step traces from the results.
    #[arg(long)]
    pub no_traces: bool,
    /// Skip malformed dataset lines instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub run_id: Option<String>,
    /// Model name sent to the endpoint.
    #[arg(long, env = "CLINSV_MODEL")]
    pub model: Option<String>,
    /// Endpoint base URL, e.g. https://api.openai.com.
    #[arg(long, env = "CLINSV_API_BASE")]
    pub api_base: Option<String>,
    /// Single-call baseline that folds all checks into one prompt.
    #[arg(long)]
    pub megaprompt: bool,
    /// Prompt catalog directory, replacing the built-in prompts.
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// Evaluate only this many documents, drawn with `--subset-seed`.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub subset_seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub api_base: Option<String>,
    pub api_key_env: String,
    pub auth_header: Option<String>,
    pub timeout: Duration,
    pub max_attempts: Option<u32>,
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct Settings {
    pub task: TaskKind,
    pub dataset: PathBuf,
    pub backend: BackendKind,
    pub script: Option<PathBuf>,
    pub steps: StepSelection,
    pub seeds: Vec<u64>,
    pub workers: usize,
    pub out: PathBuf,
    pub cache: Option<PathBuf>,
    pub traces: bool,
    pub lenient: bool,
    pub run_id: Option<String>,
    pub model: String,
    pub http: HttpSettings,
    pub megaprompt: bool,
    pub prompts_dir: Option<PathBuf>,
    pub limit: Option<usize>,
    pub subset_seed: Option<u64>,
    file: PipelineOverrides,
}

#[derive(Debug, Clone, Default)]
struct PipelineOverrides {
    mode: Option<Mode>,
    temperature: Option<f64>,
    max_tokens_extract: Option<u32>,
    max_tokens_verdict: Option<u32>,
    omission_min_iters: Option<u32>,
    omission_max_iters: Option<u32>,
    demonstrations_k: Option<usize>,
    prune_mode: Option<PruneMode>,
    fuzzy_threshold: Option<f64>,
    map_icd: Option<bool>,
}

pub const DEFAULT_WORKERS: usize = 4;
pub const DEFAULT_API_KEY_ENV: &str = "CLINSV_API_KEY";

impl Settings {
    pub fn resolve(args: &RunArgs) -> CliResult<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let Some(task) = args.task.clone().or(file.task) else {
            return fail(Exit::Config, "no task given; pass --task or set `task` in the config");
        };
        let task: TaskKind = task.parse().or_exit(Exit::Config)?;
        let Some(dataset) = args.dataset.clone().or(file.dataset) else {
            return fail(Exit::Config, "no dataset given; pass --dataset or set `dataset` in the config");
        };
        let steps = match args.steps.clone().or(file.steps) {
            Some(s) => s.parse().or_exit(Exit::Config)?,
            None => StepSelection::full(),
        };
        let seeds = args.seeds.clone().or(file.seeds).unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return fail(Exit::Config, "at least one seed is required");
        }
        let workers = args.workers.or(file.workers).unwrap_or(DEFAULT_WORKERS);
        if workers == 0 {
            return fail(Exit::Config, "workers must be at least 1");
        }
        let script = args.script.clone().or(file.script);
        let backend = args.backend.or(file.backend).unwrap_or(if script.is_some() { BackendKind::Mock } else { BackendKind::Http });
        Ok(Settings {
            task,
            dataset,
            backend,
            script,
            steps,
            seeds,
            workers,
            out: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("runs")),
            cache: args.cache.clone().or(file.cache),
            traces: !(args.no_traces || file.no_traces.unwrap_or(false)),
            lenient: args.lenient || file.lenient.unwrap_or(false),
            run_id: args.run_id.clone().or(file.run_id),
            model: args.model.clone().or(file.model).unwrap_or_else(|| "gpt-4o-mini".to_string()),
            http: HttpSettings {
                api_base: args.api_base.clone().or(file.api_base),
                api_key_env: file.api_key_env.unwrap_or_else(|| DEFAULT_API_KEY_ENV.to_string()),
                auth_header: file.auth_header,
                timeout: Duration::from_secs(file.timeout_secs.unwrap_or(120)),
                max_attempts: file.max_attempts,
            },
            megaprompt: args.megaprompt || file.megaprompt.unwrap_or(false),
            prompts_dir: args.prompts_dir.clone().or(file.prompts_dir),
            limit: args.limit.or(file.limit),
            subset_seed: args.subset_seed.or(file.subset_seed),
            file: PipelineOverrides {
                mode: file.mode,
                temperature: file.temperature,
                max_tokens_extract: file.max_tokens_extract,
                max_tokens_verdict: file.max_tokens_verdict,
                omission_min_iters: file.omission_min_iters,
                omission_max_iters: file.omission_max_iters,
                demonstrations_k: file.demonstrations_k,
                prune_mode: file.prune_mode,
                fuzzy_threshold: file.fuzzy_threshold,
                map_icd: file.map_icd,
            },
        })
    }

    /// Pipeline configuration for one seed, starting from the task defaults.
    pub fn pipeline_config(&self, long_input: bool, seed: u64, steps: &StepSelection) -> CliResult<PipelineConfig> {
        let o = &self.file;
        let mut c = PipelineConfig::for_task(self.task, long_input).with_steps(steps.clone());
        c.model_id = self.model.clone();
        c.seed = seed;
        c.mode = o.mode.unwrap_or(c.mode);
        c.temperature = o.temperature.unwrap_or(c.temperature);
        c.max_tokens_extract = o.max_tokens_extract.unwrap_or(c.max_tokens_extract);
        c.max_tokens_verdict = o.max_tokens_verdict.unwrap_or(c.max_tokens_verdict);
        c.omission_min_iters = o.omission_min_iters.unwrap_or(c.omission_min_iters);
        c.omission_max_iters = o.omission_max_iters.unwrap_or(c.omission_max_iters);
        c.demonstrations_k = o.demonstrations_k.unwrap_or(c.demonstrations_k);
        c.prune_mode = o.prune_mode.unwrap_or(c.prune_mode);
        c.fuzzy_threshold = o.fuzzy_threshold.unwrap_or(c.fuzzy_threshold);
        c.map_icd = o.map_icd.unwrap_or(c.map_icd);
        c.validate().or_exit(Exit::Config)?;
        Ok(c)
    }
}
