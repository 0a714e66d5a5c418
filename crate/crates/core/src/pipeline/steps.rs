use std::collections::BTreeMap;

use serde_json::json;

use super::{OptionalStep, PipelineConfig, PipelineError, PipelineResult, PruneMode, StepTrace, TraceStep};
use crate::backend::{Backend, LlmRequest, LlmResponse};
use crate::normalize::collapse_whitespace;
use crate::parsing::{
    locate_quote_with, parse_bulleted_list, parse_evidence, parse_icd_codes, parse_status_pairs, parse_verdict,
    render_as_bullets, scan_icd_codes, Parsed,
};
use crate::prompts::{build_megaprompt, render, render_demonstrations, Bindings, DemonstrationSet, PromptCatalog, PromptTemplate};
use crate::types::{Document, EvidenceSpan, ExtractedItem, ExtractionSet, ItemFlag, Origin};

const NO_EVIDENCE: &str = "(no evidence found)";

/// A configured pipeline bound to one backend and prompt catalog.
///
/// The demonstration set is fixed for the whole run so every document sees
/// the same few-shot examples.
pub struct Pipeline<'a, B: Backend + ?Sized> {
    backend: &'a B,
    catalog: &'a PromptCatalog,
    config: PipelineConfig,
    demonstrations: String,
}

impl<'a, B: Backend + ?Sized> Pipeline<'a, B> {
    pub fn new(backend: &'a B, catalog: &'a PromptCatalog, config: PipelineConfig) -> Result<Self, PipelineError> {
        Self::with_demonstrations(backend, catalog, config, &DemonstrationSet::default())
    }

    pub fn with_demonstrations(
        backend: &'a B,
        catalog: &'a PromptCatalog,
        config: PipelineConfig,
        demos: &DemonstrationSet,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        let original = catalog.get(config.task, "original")?;
        let demonstrations = render_demonstrations(demos, original);
        Ok(Pipeline { backend, catalog, config, demonstrations })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn check_task(&self, doc: &Document) -> Result<(), PipelineError> {
        if doc.task != self.config.task {
            return Err(PipelineError::TaskMismatch { doc_id: doc.id.clone(), expected: self.config.task, found: doc.task });
        }
        Ok(())
    }

    fn call(&self, step: &TraceStep, template: &PromptTemplate, bindings: &Bindings, max_tokens: u32) -> Result<(LlmRequest, LlmResponse), PipelineError> {
        let prompt = render(template, bindings, self.config.mode)?;
        let mut request = LlmRequest::new(self.config.model_id.clone(), prompt);
        request.temperature = self.config.temperature;
        request.max_output_tokens = max_tokens;
        let response = self
            .backend
            .complete(&request)
            .map_err(|source| PipelineError::Backend { step: step.label(), source })?;
        Ok((request, response))
    }

    fn bindings(&self, doc: &Document) -> Bindings {
        let mut b = Bindings::new();
        b.insert("input".into(), doc.text.clone());
        b
    }

    /// Parse a list answer into items: status pairs for the medication task,
    /// bullets otherwise.
    fn parse_items(&self, text: &str, origin: Origin) -> Parsed<Vec<ExtractedItem>> {
        if self.config.task.has_status() {
            let parsed = parse_status_pairs(text);
            let items = parsed
                .value
                .into_iter()
                .map(|p| {
                    let mut item = ExtractedItem::new(p.name, origin).with_status(p.status);
                    if p.flagged {
                        item.flags.push(ItemFlag::UnknownStatus { raw: p.raw_status });
                    }
                    item
                })
                .collect();
            Parsed::with_warnings(items, parsed.warnings)
        } else {
            let parsed = parse_bulleted_list(text);
            let items = parsed.value.into_iter().map(|raw| ExtractedItem::new(raw, origin)).collect();
            Parsed::with_warnings(items, parsed.warnings)
        }
    }

    /// How an item is shown to the model in later steps.
    fn display(&self, item: &ExtractedItem) -> String {
        let name = collapse_whitespace(item.raw_value.trim());
        match item.status {
            Some(s) if self.config.task.has_status() => format!("{name}: {s}"),
            _ => name,
        }
    }

    fn render_items(&self, set: &ExtractionSet) -> String {
        let shown: Vec<String> = set.items().iter().map(|i| self.display(i)).collect();
        if shown.is_empty() {
            "- none".to_string()
        } else {
            render_as_bullets(&shown)
        }
    }

    fn extraction_step(
        &self,
        doc: &Document,
        step: TraceStep,
        template: &PromptTemplate,
        origin: Origin,
        traces: &mut Vec<StepTrace>,
    ) -> Result<ExtractionSet, PipelineError> {
        let mut bindings = self.bindings(doc);
        bindings.insert("demonstrations".into(), self.demonstrations.clone());
        let (request, response) = self.call(&step, template, &bindings, self.config.max_tokens_extract)?;
        let parsed = self.parse_items(&response.text, origin);
        let raw_count = parsed.value.len();
        let set = ExtractionSet::from_items(parsed.value);
        let mut warnings = parsed.warnings;
        if set.len() < raw_count {
            warnings.push(format!("dropped {} duplicate item(s)", raw_count - set.len()));
        }
        traces.push(StepTrace {
            step,
            request,
            response,
            parsed: json!(set.items().iter().map(|i| self.display(i)).collect::<Vec<_>>()),
            warnings,
            items_before: Vec::new(),
            items_after: set.keys(),
        });
        Ok(set)
    }

    /// First extraction straight from the document, with demonstrations.
    pub fn step_original(&self, doc: &Document, traces: &mut Vec<StepTrace>) -> Result<ExtractionSet, PipelineError> {
        self.check_task(doc)?;
        let template = self.catalog.get(self.config.task, "original")?;
        self.extraction_step(doc, TraceStep::Original, template, Origin::Original, traces)
    }

    /// Ask for missed items until the loop has run `omission_min_iters` times
    /// and the last round found nothing new, or `omission_max_iters` is hit.
    /// Returns the merged set and the number of iterations run.
    pub fn step_omission_loop(
        &self,
        doc: &Document,
        current: ExtractionSet,
        traces: &mut Vec<StepTrace>,
    ) -> Result<(ExtractionSet, u32), PipelineError> {
        self.check_task(doc)?;
        let template = self.catalog.get(self.config.task, "omission")?;
        let mut current = current;
        let mut iteration = 0;
        loop {
            iteration += 1;
            let step = TraceStep::Omission { iteration };
            let mut bindings = self.bindings(doc);
            bindings.insert("items".into(), self.render_items(&current));
            let (request, response) = self.call(&step, template, &bindings, self.config.max_tokens_extract)?;
            let parsed = self.parse_items(&response.text, Origin::Omission { iteration });
            let proposed: Vec<String> = parsed.value.iter().map(|i| self.display(i)).collect();
            let before = current.keys();
            let outcome = current.merge(parsed.value);
            let mut warnings = parsed.warnings;
            for c in &outcome.conflicts {
                warnings.push(format!("status conflict for `{}`: kept {}, model proposed {}", c.key, c.kept, c.proposed));
            }
            current = outcome.set;
            traces.push(StepTrace {
                step,
                request,
                response,
                parsed: json!({ "proposed": proposed, "new_items": outcome.new_items }),
                warnings,
                items_before: before,
                items_after: current.keys(),
            });
            let at_fixpoint = iteration >= self.config.omission_min_iters && outcome.new_items == 0;
            if at_fixpoint || iteration >= self.config.omission_max_iters {
                return Ok((current, iteration));
            }
        }
    }

    /// Ask for a supporting quote per item and localize each quote in the
    /// document. Items without a usable quote get a `NotFound` span and the
    /// `Unsupported` flag. An empty set makes no call.
    pub fn step_evidence(&self, doc: &Document, items: ExtractionSet, traces: &mut Vec<StepTrace>) -> Result<ExtractionSet, PipelineError> {
        self.check_task(doc)?;
        if items.is_empty() {
            return Ok(items);
        }
        let template = self.catalog.get(self.config.task, "evidence")?;
        let mut bindings = self.bindings(doc);
        bindings.insert("items".into(), self.render_items(&items));
        let step = TraceStep::Evidence;
        let (request, response) = self.call(&step, template, &bindings, self.config.max_tokens_extract)?;

        let keys = items.keys();
        let parsed = parse_evidence(&response.text, &keys);
        let mut warnings = parsed.warnings;
        let mut items = items;
        let mut summary = BTreeMap::new();
        for item in items.items_mut() {
            let span = match parsed.value.get(item.key()) {
                Some(quote) => locate_quote_with(&doc.text, quote, self.config.fuzzy_threshold),
                None => EvidenceSpan::not_found(""),
            };
            if !span.is_found() {
                if !span.quote.is_empty() {
                    warnings.push(format!("quote for `{}` not found in document", item.key()));
                }
                if !item.flags.contains(&ItemFlag::Unsupported) {
                    item.flags.push(ItemFlag::Unsupported);
                }
            }
            summary.insert(item.key().to_string(), json!({ "quote": span.quote, "start": span.start, "end": span.end, "match": span.match_kind }));
            item.evidence = Some(span);
        }
        traces.push(StepTrace {
            step,
            request,
            response,
            parsed: json!(summary),
            warnings,
            items_before: keys.clone(),
            items_after: keys,
        });
        Ok(items)
    }

    /// Verify items and split them into kept and pruned. Uses the evidence
    /// quotes when the evidence step is enabled, else checks each item
    /// against the document alone.
    pub fn step_prune(
        &self,
        doc: &Document,
        items: ExtractionSet,
        traces: &mut Vec<StepTrace>,
    ) -> Result<(ExtractionSet, Vec<ExtractedItem>), PipelineError> {
        self.check_task(doc)?;
        if items.is_empty() {
            return Ok((items, Vec::new()));
        }
        let verdicts = match self.config.prune_mode {
            PruneMode::PerItem => self.prune_per_item(doc, &items, traces)?,
            PruneMode::Batched => self.prune_batched(doc, &items, traces)?,
        };
        let mut kept = ExtractionSet::new();
        let mut pruned = Vec::new();
        for (mut item, (keep, ambiguous, reason)) in items.into_items().into_iter().zip(verdicts) {
            if ambiguous && !item.flags.contains(&ItemFlag::AmbiguousVerdict) {
                item.flags.push(ItemFlag::AmbiguousVerdict);
            }
            if keep {
                kept.insert(item);
            } else {
                item.prune(&reason);
                pruned.push(item);
            }
        }
        Ok((kept, pruned))
    }

    fn quote_for(&self, item: &ExtractedItem) -> String {
        match &item.evidence {
            Some(span) if !span.quote.is_empty() => span.quote.clone(),
            _ => NO_EVIDENCE.to_string(),
        }
    }

    fn prune_per_item(&self, doc: &Document, items: &ExtractionSet, traces: &mut Vec<StepTrace>) -> Result<Vec<(bool, bool, String)>, PipelineError> {
        let name = if self.config.prune_uses_evidence() { "prune" } else { "prune_direct" };
        let template = self.catalog.get(self.config.task, name)?;
        let mut out = Vec::with_capacity(items.len());
        let mut remaining = items.keys();
        for item in items.items() {
            let step = TraceStep::Prune { item: Some(item.key().to_string()) };
            let mut bindings = self.bindings(doc);
            bindings.insert("item".into(), self.display(item));
            if self.config.prune_uses_evidence() {
                bindings.insert("quote".into(), self.quote_for(item));
            }
            let (request, response) = self.call(&step, template, &bindings, self.config.max_tokens_verdict)?;
            let verdict = parse_verdict(&response.text);
            let before = remaining.clone();
            if !verdict.value.keep {
                remaining.retain(|k| k != item.key());
            }
            traces.push(StepTrace {
                step,
                request,
                response: response.clone(),
                parsed: json!({ "keep": verdict.value.keep, "ambiguous": verdict.value.ambiguous }),
                warnings: verdict.warnings,
                items_before: before,
                items_after: remaining.clone(),
            });
            out.push((verdict.value.keep, verdict.value.ambiguous, response.text.trim().to_string()));
        }
        Ok(out)
    }

    fn prune_batched(&self, doc: &Document, items: &ExtractionSet, traces: &mut Vec<StepTrace>) -> Result<Vec<(bool, bool, String)>, PipelineError> {
        let template = self.catalog.get(self.config.task, "prune_batch")?;
        let list: Vec<String> = items
            .items()
            .iter()
            .map(|i| format!("{}: \"{}\"", self.display(i), self.quote_for(i)))
            .collect();
        let mut bindings = self.bindings(doc);
        bindings.insert("evidence_list".into(), render_as_bullets(&list));
        let step = TraceStep::Prune { item: None };
        let (request, response) = self.call(&step, template, &bindings, self.config.max_tokens_verdict.saturating_mul(4))?;

        let keys = items.keys();
        let answers = parse_evidence(&response.text, &keys);
        let mut warnings = answers.warnings;
        let mut out = Vec::with_capacity(items.len());
        let mut summary = BTreeMap::new();
        for key in &keys {
            let (keep, ambiguous, reason) = match answers.value.get(key) {
                Some(answer) => {
                    let v = parse_verdict(answer);
                    warnings.extend(v.warnings.into_iter().map(|w| format!("{key}: {w}")));
                    (v.value.keep, v.value.ambiguous, answer.clone())
                }
                None => (true, true, String::new()),
            };
            summary.insert(key.clone(), json!({ "keep": keep, "ambiguous": ambiguous }));
            out.push((keep, ambiguous, reason));
        }
        let after = keys.iter().zip(&out).filter(|(_, v)| v.0).map(|(k, _)| k.clone()).collect();
        traces.push(StepTrace { step, request, response, parsed: json!(summary), warnings, items_before: keys, items_after: after });
        Ok(out)
    }

    /// Convert diagnoses to ICD codes with one batched call. Codes are paired
    /// to items by position when the counts agree. Returns deduplicated
    /// codes in answer order.
    pub fn map_to_icd(&self, items: &mut ExtractionSet, traces: &mut Vec<StepTrace>) -> Result<Vec<String>, PipelineError> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let template = self.catalog.get(self.config.task, "icd_map")?;
        let mut bindings = Bindings::new();
        bindings.insert("items".into(), self.render_items(items));
        let step = TraceStep::IcdMap;
        let (request, response) = self.call(&step, template, &bindings, self.config.max_tokens_extract)?;
        let parsed = parse_icd_codes(&response.text);
        let positional = scan_icd_codes(&response.text);
        let mut warnings = parsed.warnings;
        if positional.len() == items.len() {
            for (item, code) in items.items_mut().zip(&positional) {
                item.icd_code = Some(code.clone());
            }
        } else {
            warnings.push(format!("{} diagnoses but {} codes; codes left unpaired", items.len(), positional.len()));
        }
        let keys = items.keys();
        traces.push(StepTrace {
            step,
            request,
            response,
            parsed: json!(parsed.value),
            warnings,
            items_before: keys.clone(),
            items_after: keys,
        });
        Ok(parsed.value)
    }

    /// Original extraction, then the enabled steps in the fixed order
    /// omission, evidence, prune, then ICD mapping for the coding tasks.
    pub fn run(&self, doc: &Document) -> Result<PipelineResult, (PipelineError, Vec<StepTrace>)> {
        let mut traces = Vec::new();
        match self.run_inner(doc, &mut traces) {
            Ok((final_items, pruned_items, icd_codes, omission_iterations)) => Ok(self.assemble(doc, final_items, pruned_items, icd_codes, omission_iterations, traces)),
            Err(e) => Err((e, traces)),
        }
    }

    #[allow(clippy::type_complexity)]
    fn run_inner(
        &self,
        doc: &Document,
        traces: &mut Vec<StepTrace>,
    ) -> Result<(ExtractionSet, Vec<ExtractedItem>, Option<Vec<String>>, u32), PipelineError> {
        let steps = &self.config.steps;
        let mut items = self.step_original(doc, traces)?;
        let mut iterations = 0;
        if steps.has(OptionalStep::Omission) {
            (items, iterations) = self.step_omission_loop(doc, items, traces)?;
        }
        if steps.has(OptionalStep::Evidence) {
            items = self.step_evidence(doc, items, traces)?;
        }
        let mut pruned = Vec::new();
        if steps.has(OptionalStep::Prune) {
            (items, pruned) = self.step_prune(doc, items, traces)?;
        }
        let codes = if self.config.map_icd { Some(self.map_to_icd(&mut items, traces)?) } else { None };
        Ok((items, pruned, codes, iterations))
    }

    /// The single-call baseline. ICD tasks still get the mapping call, since
    /// codes are what they are scored on.
    pub fn run_megaprompt(&self, doc: &Document) -> Result<PipelineResult, (PipelineError, Vec<StepTrace>)> {
        let mut traces = Vec::new();
        let outcome = (|| {
            self.check_task(doc)?;
            let template = build_megaprompt(self.catalog, self.config.task)?;
            let mut items = self.extraction_step(doc, TraceStep::MegaPrompt, &template, Origin::MegaPrompt, &mut traces)?;
            let codes = if self.config.map_icd { Some(self.map_to_icd(&mut items, &mut traces)?) } else { None };
            Ok((items, codes))
        })();
        match outcome {
            Ok((items, codes)) => Ok(self.assemble(doc, items, Vec::new(), codes, 0, traces)),
            Err(e) => Err((e, traces)),
        }
    }

    fn assemble(
        &self,
        doc: &Document,
        final_items: ExtractionSet,
        pruned_items: Vec<ExtractedItem>,
        icd_codes: Option<Vec<String>>,
        omission_iterations: u32,
        traces: Vec<StepTrace>,
    ) -> PipelineResult {
        PipelineResult {
            doc_id: doc.id.clone(),
            task: doc.task,
            wall_time_ms: traces.iter().map(|t| t.response.latency_ms).sum(),
            final_items,
            pruned_items,
            traces,
            icd_codes,
            omission_iterations,
            config: self.config.clone(),
        }
    }
}
