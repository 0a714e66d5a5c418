//! Prompt templates for every (task, step) pair, the renderer, few-shot
//! demonstration sampling, and the single-call mega-prompt baseline.
//!
//! Catalog directory layout: `<dir>/VERSION` holds the catalog version and
//! `<dir>/<task>/<name>.txt` holds one template:
//!
//! ```text
//! id: medication_status/original
//! step: original
//! task: medication_status
//! ---
//! [system]
//! fixed task instructions
//! [user]
//! {demonstrations}Patient note:
//! {input}
//! ```
//!
//! Placeholders are `{name}`; `{{` and `}}` produce literal braces.

mod catalog;
mod demos;
mod render;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::TaskKind;

pub use catalog::{build_megaprompt, PromptCatalog, MEGAPROMPT_POSTSCRIPT_HEADER};
pub use demos::{render_demonstrations, sample_demonstrations, Demonstration, DemonstrationSet};
pub use render::{placeholders, render, render_text, Bindings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStep {
    Original,
    Omission,
    Evidence,
    Prune,
    MegaPrompt,
    IcdMap,
}

impl std::str::FromStr for PromptStep {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "original" => Ok(PromptStep::Original),
            "omission" => Ok(PromptStep::Omission),
            "evidence" => Ok(PromptStep::Evidence),
            "prune" => Ok(PromptStep::Prune),
            "mega_prompt" | "megaprompt" => Ok(PromptStep::MegaPrompt),
            "icd_map" => Ok(PromptStep::IcdMap),
            other => Err(PromptError::Catalog(format!("unknown step `{other}`"))),
        }
    }
}

/// One prompt: fixed instructions (the chat system message) and a body with
/// placeholders (the chat user message).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub step: PromptStep,
    pub task: TaskKind,
    pub system: String,
    pub body: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("template `{template}` uses placeholder `{{{name}}}` but no value was bound")]
    MissingPlaceholder { template: String, name: String },
    #[error("no template `{0}` in prompt catalog")]
    UnknownTemplate(String),
    #[error("prompt catalog error: {0}")]
    Catalog(String),
    #[error("demonstration pool has {pool} example(s) but {k} were requested")]
    PoolTooSmall { pool: usize, k: usize },
}
