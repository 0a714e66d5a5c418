//! Exact-match set metrics, macro averaging, the top-k ICD code filter,
//! evidence-span scoring, and ablation tables.
//!
//! Conventions:
//! - values compare after normalization (case folded, whitespace collapsed);
//! - an empty prediction against empty gold scores P = R = F1 = 1, and an
//!   empty side against a non-empty one scores 0;
//! - macro F1 is the mean of per-document F1.

mod ablation;
mod metrics;
mod spans;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::normalize::normalize;
use crate::pipeline::PipelineResult;
use crate::types::StatusLabel;

pub use ablation::{ablation_table, AblationRow, AblationRun, AblationTable, MeanSem};
pub use metrics::{
    evaluate_doc, evaluate_keys, evaluate_result, filter_codes, gold_keys, macro_average, macro_average_exact,
    normalize_gold, prediction_keys, top_k_codes, DocMetrics, ExactMetrics,
};
pub use spans::{evaluate_spans, intervals_overlap, SpanEvalReport};

/// Number of most frequent gold codes ICD evaluation is restricted to.
pub const DEFAULT_TOP_K_CODES: usize = 50;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("no gold spans available for span evaluation")]
    NoGoldSpans,
    #[error("document sets differ between {expected} and {found}: {detail}")]
    MismatchedDocSets { expected: String, found: String, detail: String },
    #[error("no gold annotation for document `{0}`")]
    MissingGold(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOn {
    #[default]
    Value,
    ValueAndStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldItem {
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<StatusLabel>,
}

impl GoldItem {
    /// The value is normalized on construction.
    pub fn new(value: &str, status: Option<StatusLabel>) -> Self {
        GoldItem { value: normalize(value), status }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub doc_id: String,
    pub items: Vec<GoldItem>,
    /// Human-annotated `[start, end)` char intervals, when available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<(usize, usize)>>,
}

impl GoldAnnotation {
    pub fn new(doc_id: impl Into<String>, items: Vec<GoldItem>, spans: Option<Vec<(usize, usize)>>) -> Self {
        GoldAnnotation { doc_id: doc_id.into(), items, spans }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub match_on: MatchOn,
    /// Restrict ICD evaluation to the `k` most frequent gold codes.
    pub top_k_codes: Option<usize>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { match_on: MatchOn::Value, top_k_codes: Some(DEFAULT_TOP_K_CODES) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocEval {
    pub doc_id: String,
    pub metrics: DocMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_on: MatchOn,
    #[serde(rename = "macro")]
    pub macro_metrics: DocMetrics,
    /// Macro metrics requiring the status to match too, for tasks with a
    /// status label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_with_status: Option<DocMetrics>,
    pub per_doc: Vec<DocEval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_filter: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<SpanEvalReport>,
    /// How macro F1 was computed, recorded for readers of the report.
    pub f1_averaging: String,
}

/// Evaluate results against gold, per document in doc-id order.
pub fn evaluate_corpus(results: &[PipelineResult], gold: &[GoldAnnotation], options: &EvalOptions) -> Result<EvalReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let by_id: HashMap<&str, &GoldAnnotation> = gold.iter().map(|g| (g.doc_id.as_str(), g)).collect();
    let mut sorted: Vec<&PipelineResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

    let is_icd = sorted.iter().any(|r| r.icd_codes.is_some());
    let code_filter: Option<BTreeSet<String>> = match options.top_k_codes {
        Some(k) if is_icd => Some(top_k_codes(gold, k)),
        _ => None,
    };
    let has_status = sorted.iter().any(|r| r.task.has_status());

    let mut per_doc = Vec::with_capacity(sorted.len());
    let mut with_status = Vec::new();
    for r in &sorted {
        let g = by_id.get(r.doc_id.as_str()).ok_or_else(|| EvalError::MissingGold(r.doc_id.clone()))?;
        per_doc.push(DocEval { doc_id: r.doc_id.clone(), metrics: evaluate_result(r, g, options.match_on, code_filter.as_ref()) });
        if has_status {
            with_status.push(evaluate_result(r, g, MatchOn::ValueAndStatus, None));
        }
    }
    let macro_metrics = macro_average(&per_doc.iter().map(|d| d.metrics).collect::<Vec<_>>())?;
    let macro_with_status = if has_status { Some(macro_average(&with_status)?) } else { None };

    let spans = if gold.iter().any(|g| g.spans.is_some()) && sorted.iter().any(|r| r.final_items.items().iter().any(|i| i.evidence.is_some())) {
        Some(evaluate_spans(results, gold)?)
    } else {
        None
    };

    Ok(EvalReport {
        match_on: options.match_on,
        macro_metrics,
        macro_with_status,
        per_doc,
        code_filter: code_filter.map(|f| f.into_iter().collect()),
        spans,
        f1_averaging: "mean of per-document F1".into(),
    })
}

impl EvalReport {
    /// Short aligned summary for terminals.
    pub fn render_text(&self) -> String {
        let m = &self.macro_metrics;
        let mut out = format!(
            "documents  {}\nprecision  {:.4}\nrecall     {:.4}\nf1         {:.4}\n",
            self.per_doc.len(),
            m.precision,
            m.recall,
            m.f1
        );
        if let Some(s) = &self.macro_with_status {
            out.push_str(&format!("f1 (with status)  {:.4}\n", s.f1));
        }
        if let Some(f) = &self.code_filter {
            out.push_str(&format!("restricted to top {} codes\n", f.len()));
        }
        if let Some(s) = &self.spans {
            out.push_str(&format!(
                "span overlap accuracy  {:.4} ({}/{} spans)\nmean span length       {:.2} tokens\n",
                s.overlap_accuracy, s.overlapping, s.n_spans, s.mean_span_length
            ));
        }
        out
    }

    /// One TSV row per document plus a final macro row.
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("doc_id\tprecision\trecall\tf1\ttp\tfp\tfn\n");
        let row = |id: &str, m: &DocMetrics| format!("{id}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\n", m.precision, m.recall, m.f1, m.tp, m.fp, m.fn_);
        for d in &self.per_doc {
            out.push_str(&row(&d.doc_id, &d.metrics));
        }
        out.push_str(&row("macro", &self.macro_metrics));
        out
    }
}
