use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Pipeline, PipelineResult, StepTrace};
use crate::backend::Backend;
use crate::types::Document;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    #[default]
    Pipeline,
    MegaPrompt,
}

/// A document whose run was aborted, with the traces recorded before the
/// failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocFailure {
    pub doc_id: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub traces: Vec<StepTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DocOutcome {
    Ok(Box<PipelineResult>),
    Failed(DocFailure),
}

impl DocOutcome {
    pub fn doc_id(&self) -> &str {
        match self {
            DocOutcome::Ok(r) => &r.doc_id,
            DocOutcome::Failed(f) => &f.doc_id,
        }
    }

    pub fn result(&self) -> Option<&PipelineResult> {
        match self {
            DocOutcome::Ok(r) => Some(r),
            DocOutcome::Failed(_) => None,
        }
    }
}

/// Run every document on up to `workers` threads. A failing document is
/// recorded and the batch goes on. `on_done` sees outcomes in completion
/// order; the returned vector is in input order.
pub fn run_batch<B: Backend + ?Sized>(
    pipeline: &Pipeline<'_, B>,
    docs: &[Document],
    workers: usize,
    mode: BatchMode,
    on_done: &(dyn Fn(&DocOutcome) + Sync),
) -> Vec<DocOutcome> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<DocOutcome>>> = Mutex::new(vec![None; docs.len()]);
    let workers = workers.clamp(1, docs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(doc) = docs.get(i) else { break };
                let run = match mode {
                    BatchMode::Pipeline => pipeline.run(doc),
                    BatchMode::MegaPrompt => pipeline.run_megaprompt(doc),
                };
                let outcome = match run {
                    Ok(r) => DocOutcome::Ok(Box::new(r)),
                    Err((e, traces)) => DocOutcome::Failed(DocFailure { doc_id: doc.id.clone(), error: e.to_string(), traces }),
                };
                on_done(&outcome);
                slots.lock().expect("result slots poisoned")[i] = Some(outcome);
            });
        }
    });

    slots.into_inner().expect("result slots poisoned").into_iter().map(|o| o.expect("every document ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{FnBackend, BackendError};
    use crate::pipeline::{PipelineConfig, StepSelection};
    use crate::prompts::PromptCatalog;
    use crate::types::TaskKind;

    #[test]
    fn failures_are_isolated_and_order_is_kept() {
        let backend = FnBackend::new("flaky", |req| {
            let text = req.prompt.text();
            if text.contains("doc-3") {
                Err(BackendError::Backend { status: 400, message: "bad".into() })
            } else {
                Ok("- placebo".into())
            }
        });
        let catalog = PromptCatalog::builtin();
        let config = PipelineConfig::for_task(TaskKind::ClinicalTrialArm, false).with_steps(StepSelection::original_only());
        let pipeline = Pipeline::new(&backend, &catalog, config).unwrap();
        let docs: Vec<Document> =
            (0..8).map(|i| Document::new(format!("d{i}"), format!("abstract doc-{i}"), TaskKind::ClinicalTrialArm).unwrap()).collect();
        let seen = AtomicUsize::new(0);
        let out = run_batch(&pipeline, &docs, 4, BatchMode::Pipeline, &|_| {
            seen.fetch_add(1, Ordering::SeqCst);
        });
        assert_eq!(seen.load(Ordering::SeqCst), 8);
        let ids: Vec<&str> = out.iter().map(DocOutcome::doc_id).collect();
        assert_eq!(ids, vec!["d0", "d1", "d2", "d3", "d4", "d5", "d6", "d7"]);
        assert!(matches!(out[3], DocOutcome::Failed(_)));
        assert_eq!(out.iter().filter(|o| o.result().is_some()).count(), 7);
    }

    #[test]
    fn empty_batch() {
        let backend = FnBackend::new("unused", |_| Ok(String::new()));
        let catalog = PromptCatalog::builtin();
        let pipeline = Pipeline::new(&backend, &catalog, PipelineConfig::for_task(TaskKind::ClinicalTrialArm, false)).unwrap();
        assert!(run_batch(&pipeline, &[], 4, BatchMode::Pipeline, &|_| {}).is_empty());
    }
}
