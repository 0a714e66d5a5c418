//! `clinsv`: run, score, and audit self-verifying clinical extraction.

mod backends;
mod commands;
mod exit;
mod runner;
mod settings;

use clap::{Parser, Subcommand};

use commands::{CacheCommand, EvaluateArgs, ReportArgs};
use settings::RunArgs;

const AFTER_HELP: &str = "\
Exit codes:
  0  success
  1  i/o error
  2  configuration or usage error
  3  dataset error
  4  evaluation mismatch (document sets or gold differ)
  5  backend failure (store unusable or every document failed)

Environment:
  CLINSV_API_KEY   API key for the http backend (name configurable with `api_key_env`)
  CLINSV_API_BASE  endpoint base URL, same as --api-base
  CLINSV_MODEL     model name, same as --model";

#[derive(Debug, Parser)]
#[command(name = "clinsv", version, about = "Self-verifying LLM extraction for clinical text", after_help = AFTER_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the pipeline over a dataset and write a run folder.
    Extract(RunArgs),
    /// Score run folders against gold.
    Evaluate(EvaluateArgs),
    /// Run the four step configurations over the same documents and seeds.
    Ablate(RunArgs),
    /// Write an HTML audit page with highlighted evidence.
    Report(ReportArgs),
    /// Inspect or move response stores.
    #[command(subcommand)]
    Cache(CacheCommand),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Extract(a) => commands::extract(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Report(a) => commands::report(a),
        Command::Cache(c) => commands::cache(c),
    };
    if let Err(e) = outcome {
        eprintln!("error: {:#}", e.error);
        std::process::exit(e.kind.code());
    }
}
