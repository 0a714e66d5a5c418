use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, GoldAnnotation};
use crate::pipeline::PipelineResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEvalReport {
    /// Overlapping spans over all evaluated spans, unlocalized ones included.
    pub overlap_accuracy: f64,
    pub overlapping: usize,
    pub n_spans: usize,
    /// Spans whose quote could not be localized.
    pub not_found: usize,
    /// Mean whitespace-token count of the predicted quotes.
    pub mean_span_length: f64,
    /// Documents that had gold spans and a result.
    pub n_docs: usize,
}

/// Whether half-open intervals `[a.0, a.1)` and `[b.0, b.1)` share a char.
pub fn intervals_overlap(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Score the evidence spans of final items against human-annotated spans.
///
/// A predicted span overlaps iff its char interval intersects any gold
/// interval of the same document. Documents without gold spans are skipped.
pub fn evaluate_spans(results: &[PipelineResult], gold: &[GoldAnnotation]) -> Result<SpanEvalReport, EvalError> {
    let by_id: HashMap<&str, &GoldAnnotation> = gold.iter().map(|g| (g.doc_id.as_str(), g)).collect();
    if !gold.iter().any(|g| g.spans.is_some()) {
        return Err(EvalError::NoGoldSpans);
    }
    let (mut n_spans, mut overlapping, mut not_found, mut n_docs) = (0, 0, 0, 0);
    let (mut token_total, mut quoted) = (0usize, 0usize);
    for r in results {
        let Some(gold_spans) = by_id.get(r.doc_id.as_str()).and_then(|g| g.spans.as_ref()) else {
            continue;
        };
        n_docs += 1;
        for item in r.final_items.items() {
            let Some(span) = &item.evidence else { continue };
            n_spans += 1;
            if !span.quote.trim().is_empty() {
                token_total += span.quote.split_whitespace().count();
                quoted += 1;
            }
            if !span.is_found() {
                not_found += 1;
                continue;
            }
            if gold_spans.iter().any(|&g| intervals_overlap((span.start, span.end), g)) {
                overlapping += 1;
            }
        }
    }
    Ok(SpanEvalReport {
        overlap_accuracy: if n_spans == 0 { 0.0 } else { overlapping as f64 / n_spans as f64 },
        overlapping,
        n_spans,
        not_found,
        mean_span_length: if quoted == 0 { 0.0 } else { token_total as f64 / quoted as f64 },
        n_docs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlap_definition() {
        assert!(intervals_overlap((5, 8), (0, 20)));
        assert!(intervals_overlap((0, 5), (4, 6)));
        assert!(!intervals_overlap((0, 5), (5, 9)));
        assert!(!intervals_overlap((10, 12), (0, 3)));
    }

    #[test]
    fn no_gold_spans() {
        let g = GoldAnnotation::new("d", vec![], None);
        assert_eq!(evaluate_spans(&[], &[g]), Err(EvalError::NoGoldSpans));
    }
}
