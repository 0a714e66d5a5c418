//! Self-verifying few-shot extraction for clinical text.
//!
//! A document goes through a chain of calls to one language model: an
//! original extraction, an omission loop that asks for missed items until
//! nothing new turns up, an evidence step that grounds each item in a quote
//! from the source, and a prune step that drops items the evidence does not
//! support. Coding tasks then map diagnoses to ICD codes.
//!
//! ```
//! use clinsv_core::backend::{Matcher, ScriptEntry, ScriptedBackend};
//! use clinsv_core::pipeline::{Pipeline, PipelineConfig, StepSelection};
//! use clinsv_core::prompts::PromptCatalog;
//! use clinsv_core::{Document, TaskKind};
//!
//! let backend = ScriptedBackend::new(vec![ScriptEntry::new(Matcher::Any, "- placebo\n- propofol")]);
//! let catalog = PromptCatalog::builtin();
//! let config = PipelineConfig::for_task(TaskKind::ClinicalTrialArm, false).with_steps(StepSelection::original_only());
//! let pipeline = Pipeline::new(&backend, &catalog, config).unwrap();
//! let doc = Document::new("a1", "Propofol versus placebo.", TaskKind::ClinicalTrialArm).unwrap();
//! let result = pipeline.run(&doc).map_err(|(e, _)| e).unwrap();
//! assert_eq!(result.final_items.keys(), ["placebo", "propofol"]);
//! ```

pub mod backend;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod normalize;
pub mod parsing;
pub mod pipeline;
pub mod prompts;
pub mod types;

pub use error::CoreError;
pub use normalize::normalize;
pub use types::{
    char_slice, is_long_input, Document, EvidenceSpan, ExtractedItem, ExtractionSet, IcdVersion, ItemFlag, MatchKind,
    MergeOutcome, Origin, StatusConflict, StatusLabel, TaskKind, LONG_INPUT_THRESHOLD_CHARS,
};
