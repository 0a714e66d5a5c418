use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DataError;
use crate::parsing::verify_span;
use crate::pipeline::{DocOutcome, PipelineResult};
use crate::types::{char_slice, ExtractedItem, MatchKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportOptions {
    pub title: String,
    pub run_id: String,
    pub include_pruned: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { title: "Extraction audit".into(), run_id: String::new(), include_pruned: true }
    }
}

const STYLE: &str = "body{font-family:sans-serif;max-width:60em;margin:2em auto;line-height:1.45}\
section{border-top:1px solid #ccc;padding:1em 0}\
pre.note{white-space:pre-wrap;background:#fafafa;padding:.8em;border:1px solid #eee}\
mark{background:#ffe38a}mark.pruned{background:#f3c0c0;text-decoration:line-through}\
.status{font-size:.85em;color:#555}.empty{color:#a00;font-weight:bold}\
.pruned-list li{text-decoration:line-through;color:#777}.reason{text-decoration:none;display:block;color:#444}\
.flag{font-size:.8em;color:#a60}.failed{color:#a00}";

pub fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

struct Highlight {
    start: usize,
    end: usize,
    pruned: bool,
    label: String,
}

/// Source text with highlighted spans. Spans that fail the substring check
/// or overlap an earlier span are not drawn; their count is returned.
fn highlight(text: &str, mut spans: Vec<Highlight>) -> (String, usize) {
    spans.sort_by_key(|h| (h.start, h.end));
    let mut out = String::new();
    let mut pos = 0;
    let mut skipped = 0;
    for h in spans {
        if h.start < pos {
            skipped += 1;
            continue;
        }
        out.push_str(&escape_html(char_slice(text, pos, h.start)));
        let class = if h.pruned { " class=\"pruned\"" } else { "" };
        let _ = write!(out, "<mark{class} title=\"{}\">{}</mark>", escape_html(&h.label), escape_html(char_slice(text, h.start, h.end)));
        pos = h.end;
    }
    out.push_str(&escape_html(char_slice(text, pos, text.chars().count())));
    (out, skipped)
}

fn item_line(item: &ExtractedItem) -> String {
    let mut s = escape_html(&item.raw_value);
    if let Some(status) = item.status {
        let _ = write!(s, " <span class=\"status\">{status}</span>");
    }
    if let Some(code) = &item.icd_code {
        let _ = write!(s, " <span class=\"status\">{}</span>", escape_html(code));
    }
    for f in &item.flags {
        let name = serde_json::to_value(f).ok().and_then(|v| v.get("kind").and_then(|k| k.as_str().map(String::from))).unwrap_or_default();
        let _ = write!(s, " <span class=\"flag\">[{}]</span>", escape_html(&name));
    }
    s
}

fn quote_html(item: &ExtractedItem) -> String {
    match &item.evidence {
        Some(e) if !e.quote.is_empty() => {
            let where_ = if e.match_kind == MatchKind::NotFound { " (not found in text)".to_string() } else { String::new() };
            format!(" &mdash; &ldquo;{}&rdquo;{where_}", escape_html(&e.quote))
        }
        _ => String::new(),
    }
}

fn document_section(r: &PipelineResult, text: Option<&str>, opts: &ReportOptions) -> String {
    let mut spans = Vec::new();
    let mut candidates: Vec<(&ExtractedItem, bool)> = r.final_items.items().iter().map(|i| (i, false)).collect();
    if opts.include_pruned {
        candidates.extend(r.pruned_items.iter().map(|i| (i, true)));
    }
    let mut invalid = 0;
    if let Some(text) = text {
        for (item, pruned) in candidates {
            let Some(ev) = item.evidence.as_ref().filter(|e| e.is_found()) else { continue };
            if !verify_span(text, ev, r.config.fuzzy_threshold) {
                invalid += 1;
                continue;
            }
            spans.push(Highlight { start: ev.start, end: ev.end, pruned, label: item.value.clone() });
        }
    }

    let mut out = String::new();
    let _ = writeln!(out, "<section id=\"doc-{0}\">\n<h2>{0}</h2>", escape_html(&r.doc_id));
    if r.final_items.is_empty() {
        out.push_str("<p class=\"empty\">No items extracted.</p>\n");
    } else {
        out.push_str("<ul class=\"items\">\n");
        for item in r.final_items.items() {
            let _ = writeln!(out, "<li>{}{}</li>", item_line(item), quote_html(item));
        }
        out.push_str("</ul>\n");
    }
    if opts.include_pruned && !r.pruned_items.is_empty() {
        out.push_str("<h3>Pruned</h3>\n<ul class=\"pruned-list\">\n");
        for item in &r.pruned_items {
            let reason = item.prune_reason.as_deref().unwrap_or("");
            let _ = writeln!(out, "<li>{}{}<span class=\"reason\">{}</span></li>", item_line(item), quote_html(item), escape_html(reason));
        }
        out.push_str("</ul>\n");
    }
    match text {
        Some(text) => {
            let (body, overlapping) = highlight(text, spans);
            let _ = writeln!(out, "<pre class=\"note\">{body}</pre>");
            if invalid + overlapping > 0 {
                let _ = writeln!(out, "<p class=\"flag\">{} span(s) not highlighted (overlapping or failed the offset check).</p>", invalid + overlapping);
            }
        }
        None => out.push_str("<p class=\"flag\">Source text unavailable.</p>\n"),
    }
    out.push_str("</section>\n");
    out
}

/// Render a self-contained HTML audit page. `text_of` supplies the source
/// text per document id. The output depends only on the inputs.
pub fn render_report<'a>(outcomes: &[DocOutcome], text_of: impl Fn(&str) -> Option<&'a str>, opts: &ReportOptions) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{0}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n<h1>{0}</h1>\n",
        escape_html(&opts.title)
    );
    if !opts.run_id.is_empty() {
        let _ = writeln!(out, "<p>Run <code>{}</code></p>", escape_html(&opts.run_id));
    }
    let (ok, failed): (Vec<_>, Vec<_>) = outcomes.iter().partition(|o| o.result().is_some());
    let _ = writeln!(out, "<p>{} document(s), {} failed.</p>", ok.len() + failed.len(), failed.len());
    for o in outcomes {
        match o {
            DocOutcome::Ok(r) => out.push_str(&document_section(r, text_of(&r.doc_id), opts)),
            DocOutcome::Failed(f) => {
                let _ = writeln!(
                    out,
                    "<section id=\"doc-{0}\">\n<h2>{0}</h2>\n<p class=\"failed\">Failed: {1}</p>\n</section>",
                    escape_html(&f.doc_id),
                    escape_html(&f.error)
                );
            }
        }
    }
    out.push_str("</body>\n</html>\n");
    out
}

pub fn emit_report<'a>(outcomes: &[DocOutcome], text_of: impl Fn(&str) -> Option<&'a str>, opts: &ReportOptions, out_path: &Path) -> Result<(), DataError> {
    let html = render_report(outcomes, text_of, opts);
    fs::write(out_path, html).map_err(|e| DataError::io(out_path, e))
}
