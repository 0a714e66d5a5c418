use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{EvalError, GoldAnnotation, MatchOn};
use crate::normalize::normalize;
use crate::pipeline::PipelineResult;
use crate::types::{ExtractionSet, StatusLabel};

/// Per-document set metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// The same metrics as exact fractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactMetrics {
    pub precision: Ratio<u128>,
    pub recall: Ratio<u128>,
    pub f1: Ratio<u128>,
}

impl ExactMetrics {
    /// Empty prediction against empty gold scores 1; an empty side against a
    /// non-empty one scores 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let (tp, fp, fn_) = (tp as u128, fp as u128, fn_ as u128);
        let one = Ratio::from_integer(1);
        let zero = Ratio::from_integer(0);
        if tp + fp == 0 && tp + fn_ == 0 {
            return ExactMetrics { precision: one, recall: one, f1: one };
        }
        let precision = if tp + fp == 0 { zero } else { Ratio::new(tp, tp + fp) };
        let recall = if tp + fn_ == 0 { zero } else { Ratio::new(tp, tp + fn_) };
        // 2PR/(P+R) simplifies to 2tp/(2tp+fp+fn).
        let f1 = if tp == 0 { zero } else { Ratio::new(2 * tp, 2 * tp + fp + fn_) };
        ExactMetrics { precision, recall, f1 }
    }
}

fn to_f64(r: Ratio<u128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl DocMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let e = ExactMetrics::from_counts(tp, fp, fn_);
        DocMetrics { precision: to_f64(e.precision), recall: to_f64(e.recall), f1: to_f64(e.f1), tp, fp, fn_ }
    }

    pub fn exact(&self) -> ExactMetrics {
        ExactMetrics::from_counts(self.tp, self.fp, self.fn_)
    }
}

/// Compare two key sets.
pub fn evaluate_keys(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> DocMetrics {
    let tp = pred.intersection(gold).count();
    DocMetrics::from_counts(tp, pred.len() - tp, gold.len() - tp)
}

fn key_with_status(value: &str, status: Option<StatusLabel>) -> String {
    match status {
        Some(s) => format!("{value}\u{1f}{s}"),
        None => value.to_string(),
    }
}

/// Normalized comparison keys for a prediction set.
pub fn prediction_keys(pred: &ExtractionSet, match_on: MatchOn) -> BTreeSet<String> {
    pred.items()
        .iter()
        .filter(|i| !i.pruned)
        .map(|i| match match_on {
            MatchOn::Value => i.value.clone(),
            MatchOn::ValueAndStatus => key_with_status(&i.value, i.status),
        })
        .collect()
}

pub fn gold_keys(gold: &GoldAnnotation, match_on: MatchOn) -> BTreeSet<String> {
    gold.items
        .iter()
        .map(|g| match match_on {
            MatchOn::Value => g.value.clone(),
            MatchOn::ValueAndStatus => key_with_status(&g.value, g.status),
        })
        .collect()
}

/// Case-insensitive exact matching of normalized values. With
/// `ValueAndStatus` both the value and the status label must agree.
pub fn evaluate_doc(pred: &ExtractionSet, gold: &GoldAnnotation, match_on: MatchOn) -> DocMetrics {
    evaluate_keys(&prediction_keys(pred, match_on), &gold_keys(gold, match_on))
}

/// Evaluate a pipeline result. ICD results compare codes (optionally
/// restricted to `code_filter`); others compare items.
pub fn evaluate_result(result: &PipelineResult, gold: &GoldAnnotation, match_on: MatchOn, code_filter: Option<&BTreeSet<String>>) -> DocMetrics {
    match &result.icd_codes {
        Some(codes) => {
            let pred: BTreeSet<String> = codes.iter().map(|c| c.trim().to_uppercase()).collect();
            let gold: BTreeSet<String> = gold.items.iter().map(|g| g.value.to_uppercase()).collect();
            match code_filter {
                Some(f) => evaluate_keys(&filter_codes(&pred, f), &filter_codes(&gold, f)),
                None => evaluate_keys(&pred, &gold),
            }
        }
        None => evaluate_doc(&result.final_items, gold, match_on),
    }
}

/// Unweighted mean over documents. F1 is the mean of per-document F1, not
/// the harmonic mean of the averaged precision and recall. Counts are summed.
pub fn macro_average(per_doc: &[DocMetrics]) -> Result<DocMetrics, EvalError> {
    if per_doc.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    // Sum in exact arithmetic so that averaging does not depend on order.
    let exact = macro_average_exact(per_doc)?;
    Ok(DocMetrics {
        precision: to_f64(exact.precision),
        recall: to_f64(exact.recall),
        f1: to_f64(exact.f1),
        tp: per_doc.iter().map(|m| m.tp).sum(),
        fp: per_doc.iter().map(|m| m.fp).sum(),
        fn_: per_doc.iter().map(|m| m.fn_).sum(),
    })
}

pub fn macro_average_exact(per_doc: &[DocMetrics]) -> Result<ExactMetrics, EvalError> {
    if per_doc.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let n = Ratio::from_integer(per_doc.len() as u128);
    let zero = Ratio::from_integer(0u128);
    let (mut p, mut r, mut f) = (zero, zero, zero);
    for m in per_doc {
        let e = m.exact();
        p += e.precision;
        r += e.recall;
        f += e.f1;
    }
    Ok(ExactMetrics { precision: p / n, recall: r / n, f1: f / n })
}

/// The `k` most frequent gold codes across the corpus, counting each code
/// once per document. Ties at the cutoff go to the lexicographically
/// smaller code.
pub fn top_k_codes(gold: &[GoldAnnotation], k: usize) -> BTreeSet<String> {
    let mut freq: BTreeMap<String, usize> = BTreeMap::new();
    for g in gold {
        let codes: BTreeSet<String> = g.items.iter().map(|i| i.value.to_uppercase()).collect();
        for c in codes {
            *freq.entry(c).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(k).map(|(c, _)| c).collect()
}

pub fn filter_codes(codes: &BTreeSet<String>, keep: &BTreeSet<String>) -> BTreeSet<String> {
    codes.intersection(keep).cloned().collect()
}

/// Normalize a gold value the same way predictions are normalized.
pub fn normalize_gold(value: &str) -> String {
    normalize(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::GoldItem;
    use crate::types::{ExtractedItem, Origin};

    fn set(values: &[&str]) -> ExtractionSet {
        ExtractionSet::from_items(values.iter().map(|v| ExtractedItem::new(*v, Origin::Original)))
    }

    fn gold(values: &[&str]) -> GoldAnnotation {
        GoldAnnotation::new("d", values.iter().map(|v| GoldItem::new(v, None)).collect(), None)
    }

    #[test]
    fn half_recall() {
        let m = evaluate_doc(&set(&["Hypertension"]), &gold(&["hypertension", "right adrenal mass"]), MatchOn::Value);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 1));
        assert_eq!(m.exact().f1, Ratio::new(2, 3));
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 0.5);
    }

    #[test]
    fn identity_scores_one() {
        let m = evaluate_doc(&set(&["a", "b", "c"]), &gold(&["A", "b", "c."]), MatchOn::Value);
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn status_must_match() {
        let pred = ExtractionSet::from_items([ExtractedItem::new("aspirin", Origin::Original).with_status(StatusLabel::Active)]);
        let g = GoldAnnotation::new("d", vec![GoldItem::new("aspirin", Some(StatusLabel::Discontinued))], None);
        assert_eq!(evaluate_doc(&pred, &g, MatchOn::ValueAndStatus).tp, 0);
        assert_eq!(evaluate_doc(&pred, &g, MatchOn::Value).tp, 1);
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(DocMetrics::from_counts(0, 0, 0).f1, 1.0);
        let m = DocMetrics::from_counts(0, 0, 3);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = DocMetrics::from_counts(0, 2, 0);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn macro_is_mean_of_f1() {
        let m = macro_average(&[DocMetrics::from_counts(1, 0, 0), DocMetrics::from_counts(0, 1, 1)]).unwrap();
        assert_eq!(m.f1, 0.5);
        let single = DocMetrics::from_counts(2, 1, 3);
        assert_eq!(macro_average(&[single]).unwrap(), single);
        assert_eq!(macro_average(&[]), Err(EvalError::EmptyEvaluation));
    }

    #[test]
    fn top_k_small_corpus_and_ties() {
        let g = |codes: &[&str]| gold(codes);
        let corpus = vec![g(&["I10", "E11.9"]), g(&["I10", "Z00"]), g(&["E11.9", "A01"])];
        assert_eq!(top_k_codes(&corpus, 50).len(), 4);
        // I10 and E11.9 have two documents each; A01 and Z00 tie at one.
        let top3: Vec<String> = top_k_codes(&corpus, 3).into_iter().collect();
        assert_eq!(top3, vec!["A01", "E11.9", "I10"]);
    }
}
