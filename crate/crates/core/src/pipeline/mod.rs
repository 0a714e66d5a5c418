//! The self-verification chain: original extraction, an omission loop run to
//! a fixpoint, evidence grounding, and pruning, followed by ICD mapping for
//! the coding tasks. Also the single-call mega-prompt baseline and a bounded
//! worker pool over many documents.
//!
//! Every model call is recorded as a [`StepTrace`], so a result can be
//! audited step by step and costed by counting traces.

mod batch;
mod config;
mod steps;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, LlmRequest, LlmResponse};
use crate::prompts::PromptError;
use crate::types::{ExtractedItem, ExtractionSet, TaskKind};

pub use batch::{run_batch, BatchMode, DocFailure, DocOutcome};
pub use config::{OptionalStep, PipelineConfig, PruneMode, StepSelection};
pub use steps::Pipeline;

/// Which call a trace records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "step")]
pub enum TraceStep {
    Original,
    Omission { iteration: u32 },
    Evidence,
    /// `item` is the pruned key for per-item calls and absent for one
    /// batched call.
    Prune {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        item: Option<String>,
    },
    IcdMap,
    MegaPrompt,
}

impl TraceStep {
    pub fn label(&self) -> String {
        match self {
            TraceStep::Original => "original".into(),
            TraceStep::Omission { iteration } => format!("omission#{iteration}"),
            TraceStep::Evidence => "evidence".into(),
            TraceStep::Prune { item: Some(i) } => format!("prune[{i}]"),
            TraceStep::Prune { item: None } => "prune".into(),
            TraceStep::IcdMap => "icd_map".into(),
            TraceStep::MegaPrompt => "mega_prompt".into(),
        }
    }
}

/// Full record of one model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    #[serde(flatten)]
    pub step: TraceStep,
    pub request: LlmRequest,
    pub response: LlmResponse,
    /// Structured summary of what the parser extracted from the response.
    pub parsed: serde_json::Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub items_before: Vec<String>,
    pub items_after: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub doc_id: String,
    pub task: TaskKind,
    pub final_items: ExtractionSet,
    pub pruned_items: Vec<ExtractedItem>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<StepTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icd_codes: Option<Vec<String>>,
    pub omission_iterations: u32,
    /// Sum of model latencies over all calls. Deterministic under replay,
    /// unlike wall-clock time.
    pub wall_time_ms: u64,
    pub config: PipelineConfig,
}

impl PipelineResult {
    /// Values the evaluator compares against gold: ICD codes for the coding
    /// tasks, item keys otherwise.
    pub fn predicted_values(&self) -> Vec<String> {
        match &self.icd_codes {
            Some(codes) => codes.clone(),
            None => self.final_items.keys(),
        }
    }

    pub fn llm_calls(&self) -> usize {
        self.traces.len()
    }

    pub fn warnings(&self) -> impl Iterator<Item = (&TraceStep, &str)> {
        self.traces.iter().flat_map(|t| t.warnings.iter().map(move |w| (&t.step, w.as_str())))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("{step} call failed: {source}")]
    Backend { step: String, source: BackendError },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("document `{doc_id}` is for task {found}, pipeline is configured for {expected}")]
    TaskMismatch { doc_id: String, expected: TaskKind, found: TaskKind },
}
