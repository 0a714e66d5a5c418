//! Property tests across the public API.

use std::collections::BTreeSet;

use proptest::prelude::*;

use clinsv_core::backend::{FnBackend, LlmRequest};
use clinsv_core::evaluation::{evaluate_doc, macro_average, DocMetrics, GoldAnnotation, GoldItem, MatchOn};
use clinsv_core::parsing::{is_sentinel, locate_quote, parse_bulleted_list};
use clinsv_core::pipeline::{Pipeline, PipelineConfig, PruneMode, StepSelection};
use clinsv_core::prompts::PromptCatalog;
use clinsv_core::{Document, ExtractedItem, ExtractionSet, MatchKind, Origin, TaskKind};

fn words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-e]{1,3}", 0..8)
}

/// Backend that answers the original step with `first`, each omission round
/// with the next entry of `rounds`, and rejects items in `reject`.
fn planned(first: Vec<String>, rounds: Vec<Vec<String>>, reject: BTreeSet<String>) -> FnBackend {
    let counter = std::sync::atomic::AtomicUsize::new(0);
    let bullets = |v: &[String]| if v.is_empty() { "- none".to_string() } else { v.iter().map(|w| format!("- {w}")).collect::<Vec<_>>().join("\n") };
    FnBackend::new("planned", move |req: &LlmRequest| {
        let p = req.prompt.text();
        Ok(if p.contains("Is the extracted") {
            let item = p.rsplit("Extracted clinical trial arm: ").next().unwrap_or("").lines().next().unwrap_or("").trim().to_string();
            if reject.contains(&item) { "No." } else { "Yes." }.to_string()
        } else if p.contains("were missed") {
            let n = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
            rounds.get(n).map(|r| bullets(r)).unwrap_or_else(|| "- none".to_string())
        } else {
            bullets(&first)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pipeline_sets_follow_the_plan(
        first in words(),
        rounds in prop::collection::vec(words(), 0..6),
        reject in prop::collection::btree_set("[a-e]{1,3}", 0..5),
        max_iters in 1u32..6,
        batched in any::<bool>(),
    ) {
        let backend = planned(first.clone(), rounds.clone(), reject.clone());
        let catalog = PromptCatalog::builtin();
        let mut config = PipelineConfig::for_task(TaskKind::ClinicalTrialArm, false)
            .with_steps("omission,prune".parse::<StepSelection>().unwrap());
        config.omission_min_iters = 1;
        config.omission_max_iters = max_iters;
        config.prune_mode = if batched { PruneMode::Batched } else { PruneMode::PerItem };
        let pipeline = Pipeline::new(&backend, &catalog, config).unwrap();
        let doc = Document::new("p", "Arms a b c d e.", TaskKind::ClinicalTrialArm).unwrap();
        let r = pipeline.run(&doc).map_err(|(e, _)| e).unwrap();

        // Recompute the omission loop by hand: stop at the first round that
        // adds nothing new, or at the cap.
        let mut expected: BTreeSet<String> = first.iter().cloned().collect();
        let mut iters = 0;
        for round in rounds.iter().map(Some).chain(std::iter::repeat(None)) {
            if iters == max_iters { break; }
            iters += 1;
            let before = expected.len();
            if let Some(round) = round { expected.extend(round.iter().cloned()); }
            if expected.len() == before { break; }
        }
        prop_assert_eq!(r.omission_iterations, iters);
        let kept: BTreeSet<String> = r.final_items.keys().into_iter().collect();
        let pruned: BTreeSet<String> = r.pruned_items.iter().map(|i| i.value.clone()).collect();
        prop_assert!(kept.is_disjoint(&pruned));
        prop_assert_eq!(kept.union(&pruned).cloned().collect::<BTreeSet<_>>(), expected.clone());
        if !batched {
            let want: BTreeSet<String> = expected.difference(&reject).cloned().collect();
            prop_assert_eq!(kept, want);
        }
    }

    #[test]
    fn f1_is_bounded_by_precision_and_recall(pred in words(), gold in words()) {
        let set = ExtractionSet::from_items(pred.iter().map(|w| ExtractedItem::new(w.as_str(), Origin::Original)));
        let ann = GoldAnnotation::new("d", gold.iter().map(|g| GoldItem::new(g, None)).collect(), None);
        let m = evaluate_doc(&set, &ann, MatchOn::Value);
        let lo = m.precision.min(m.recall);
        let hi = m.precision.max(m.recall);
        prop_assert!(m.f1 >= lo - 1e-12 && m.f1 <= hi + 1e-12);

        // Swapping prediction and gold swaps precision and recall.
        let set2 = ExtractionSet::from_items(gold.iter().map(|w| ExtractedItem::new(w.as_str(), Origin::Original)));
        let ann2 = GoldAnnotation::new("d", pred.iter().map(|g| GoldItem::new(g, None)).collect(), None);
        let s = evaluate_doc(&set2, &ann2, MatchOn::Value);
        prop_assert_eq!((s.tp, s.fp, s.fn_), (m.tp, m.fn_, m.fp));
        if !pred.is_empty() && !gold.is_empty() {
            prop_assert!((s.precision - m.recall).abs() < 1e-12);
        }
    }

    #[test]
    fn macro_average_lies_within_doc_range(counts in prop::collection::vec((0usize..6, 0usize..6, 0usize..6), 1..20)) {
        let docs: Vec<DocMetrics> = counts.iter().map(|&(tp, fp, fn_)| DocMetrics::from_counts(tp, fp, fn_)).collect();
        let m = macro_average(&docs).unwrap();
        let min = docs.iter().map(|d| d.f1).fold(f64::INFINITY, f64::min);
        let max = docs.iter().map(|d| d.f1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(m.f1 >= min - 1e-12 && m.f1 <= max + 1e-12);
    }

    #[test]
    fn located_spans_slice_back_to_the_quote(text in "[a-zA-Z ]{0,200}", start in 0usize..200, len in 1usize..30) {
        let chars: Vec<char> = text.chars().collect();
        let s = start.min(chars.len());
        let e = (s + len).min(chars.len());
        let quote: String = chars[s..e].iter().collect();
        let span = locate_quote(&text, &quote);
        if !quote.trim().is_empty() {
            prop_assert!(span.is_found());
        }
        if span.match_kind == MatchKind::Exact {
            prop_assert_eq!(span.slice(&text), quote.trim());
        }
        prop_assert!(span.start <= span.end && span.end <= chars.len());
    }

    #[test]
    fn bullet_lists_round_trip(items in prop::collection::vec("[a-z][a-z ]{0,12}[a-z]".prop_filter("not a sentinel", |s| !is_sentinel(s)), 1..10)) {
        let text = items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n");
        let parsed = parse_bulleted_list(&text);
        prop_assert_eq!(parsed.value, items);
    }
}
