use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate_corpus, EvalError, EvalOptions, GoldAnnotation};
use crate::pipeline::PipelineResult;

/// Mean and standard error of one metric across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSem {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; absent for a single seed.
    pub sem: Option<f64>,
}

impl MeanSem {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sem = (values.len() > 1).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            var.sqrt() / n.sqrt()
        });
        MeanSem { mean, sem }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub f1: MeanSem,
    pub precision: MeanSem,
    pub recall: MeanSem,
    pub n_docs: usize,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub task: String,
    pub rows: Vec<AblationRow>,
}

/// One configuration's results for one seed.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub row: String,
    pub seed: u64,
    pub results: Vec<PipelineResult>,
}

/// Macro metrics per row, averaged over seeds with standard error. Rows keep
/// the order of their first appearance. Every run must cover the same
/// documents.
pub fn ablation_table(task: &str, runs: &[AblationRun], gold: &[GoldAnnotation], options: &EvalOptions) -> Result<AblationTable, EvalError> {
    let mut expected: Option<(String, BTreeSet<&str>)> = None;
    for run in runs {
        let ids: BTreeSet<&str> = run.results.iter().map(|r| r.doc_id.as_str()).collect();
        match &expected {
            None => expected = Some((format!("{} seed {}", run.row, run.seed), ids)),
            Some((label, exp)) if *exp != ids => {
                return Err(EvalError::MismatchedDocSets {
                    expected: label.clone(),
                    found: format!("{} seed {}", run.row, run.seed),
                    detail: format!("{} vs {} documents", exp.len(), ids.len()),
                })
            }
            Some(_) => {}
        }
    }

    let mut order: Vec<&str> = Vec::new();
    let mut per_row: BTreeMap<&str, Vec<(f64, f64, f64, usize)>> = BTreeMap::new();
    for run in runs {
        if !order.contains(&run.row.as_str()) {
            order.push(&run.row);
        }
        let report = evaluate_corpus(&run.results, gold, options)?;
        let m = report.macro_metrics;
        per_row.entry(&run.row).or_default().push((m.f1, m.precision, m.recall, report.per_doc.len()));
    }

    let rows = order
        .into_iter()
        .map(|name| {
            let v = &per_row[name];
            let col = |f: fn(&(f64, f64, f64, usize)) -> f64| v.iter().map(f).collect::<Vec<_>>();
            AblationRow {
                name: name.to_string(),
                f1: MeanSem::of(&col(|t| t.0)),
                precision: MeanSem::of(&col(|t| t.1)),
                recall: MeanSem::of(&col(|t| t.2)),
                n_docs: v[0].3,
                n_seeds: v.len(),
            }
        })
        .collect();
    Ok(AblationTable { task: task.to_string(), rows })
}

fn cell(m: &MeanSem) -> String {
    match m.sem {
        Some(sem) => format!("{:.3} ± {:.3}", m.mean, sem),
        None => format!("{:.3}", m.mean),
    }
}

impl AblationTable {
    /// Aligned plain-text table.
    pub fn render_text(&self) -> String {
        let header = ["Configuration", "F1", "Precision", "Recall"];
        let body: Vec<[String; 4]> =
            self.rows.iter().map(|r| [r.name.clone(), cell(&r.f1), cell(&r.precision), cell(&r.recall)]).collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = format!("{}\n", self.task);
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let _ = writeln!(out, "{}", line(&header.map(String::from)));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for row in &body {
            let _ = writeln!(out, "{}", line(row));
        }
        out
    }

    /// Tab-separated values with separate SEM columns (empty for one seed).
    pub fn render_tsv(&self) -> String {
        let mut out = String::from("task\tconfiguration\tf1\tf1_sem\tprecision\tprecision_sem\trecall\trecall_sem\tn_docs\tn_seeds\n");
        let sem = |m: &MeanSem| m.sem.map(|s| format!("{s:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{}\t{:.6}\t{}\t{:.6}\t{}\t{}\t{}",
                self.task,
                r.name,
                r.f1.mean,
                sem(&r.f1),
                r.precision.mean,
                sem(&r.precision),
                r.recall.mean,
                sem(&r.recall),
                r.n_docs,
                r.n_seeds
            );
        }
        out
    }
}
