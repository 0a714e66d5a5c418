use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::evaluation::DocMetrics;
use crate::pipeline::{BatchMode, DocOutcome, PipelineConfig};
use crate::prompts::DemonstrationSet;

/// Version of the manifest and result record layout.
pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULTS_FILE: &str = "results.jsonl";

/// Everything needed to re-run a batch under a replay backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub run_id: String,
    pub tool_version: String,
    pub config: PipelineConfig,
    pub batch_mode: BatchMode,
    pub prompt_catalog_version: String,
    pub prompt_catalog_digest: String,
    pub backend: String,
    pub seeds: Vec<u64>,
    pub demonstrations: DemonstrationSet,
    pub dataset_path: String,
    pub dataset_sha256: String,
    /// Seed used to pick the evaluated subset, if one was drawn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_seed: Option<u64>,
    pub doc_ids: Vec<String>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
    pub documents: usize,
    pub failures: usize,
    pub traces_included: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<DocMetrics>,
}

impl RunManifest {
    pub fn run_dir(out_dir: &Path, run_id: &str) -> PathBuf {
        out_dir.join(run_id)
    }
}

/// Drop traces from an outcome, for runs written without them.
pub fn strip_traces(outcome: &mut DocOutcome) {
    match outcome {
        DocOutcome::Ok(r) => r.traces.clear(),
        DocOutcome::Failed(f) => f.traces.clear(),
    }
}

/// Appends one JSON line per document to `<out>/<run_id>/results.jsonl`.
///
/// Creating a writer for a run id that already has files fails with
/// `RunExists`; nothing is overwritten.
pub struct ResultWriter {
    dir: PathBuf,
    file: BufWriter<File>,
    include_traces: bool,
    written: usize,
}

impl ResultWriter {
    pub fn create(out_dir: &Path, run_id: &str, include_traces: bool) -> Result<Self, DataError> {
        if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
            return Err(DataError::Format { line: 0, reason: format!("invalid run id `{run_id}`") });
        }
        let dir = RunManifest::run_dir(out_dir, run_id);
        if dir.join(MANIFEST_FILE).exists() || dir.join(RESULTS_FILE).exists() {
            return Err(DataError::RunExists(run_id.to_string()));
        }
        fs::create_dir_all(&dir).map_err(|e| DataError::io(&dir, e))?;
        let path = dir.join(RESULTS_FILE);
        let file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => DataError::RunExists(run_id.to_string()),
            _ => DataError::io(&path, e),
        })?;
        Ok(ResultWriter { dir, file: BufWriter::new(file), include_traces, written: 0 })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, outcome: &DocOutcome) -> Result<(), DataError> {
        let line = if self.include_traces {
            serde_json::to_string(outcome)
        } else {
            let mut o = outcome.clone();
            strip_traces(&mut o);
            serde_json::to_string(&o)
        }
        .map_err(|e| DataError::Serialize(e.to_string()))?;
        let path = self.dir.join(RESULTS_FILE);
        writeln!(self.file, "{line}").and_then(|_| self.file.flush()).map_err(|e| DataError::io(&path, e))?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    /// Write the manifest last, so a run directory with a manifest is a
    /// complete run.
    pub fn finish(mut self, manifest: &RunManifest) -> Result<PathBuf, DataError> {
        let results_path = self.dir.join(RESULTS_FILE);
        self.file.flush().map_err(|e| DataError::io(&results_path, e))?;
        let path = self.dir.join(MANIFEST_FILE);
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        let json = serde_json::to_string_pretty(manifest).map_err(|e| DataError::Serialize(e.to_string()))?;
        fs::write(&tmp, json + "\n").map_err(|e| DataError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| DataError::io(&path, e))?;
        Ok(self.dir)
    }
}

/// Write a complete run in one go.
pub fn write_results(outcomes: &[DocOutcome], manifest: &RunManifest, out_dir: &Path) -> Result<PathBuf, DataError> {
    let mut w = ResultWriter::create(out_dir, &manifest.run_id, manifest.traces_included)?;
    for o in outcomes {
        w.append(o)?;
    }
    w.finish(manifest)
}

/// Read the result records of a run directory, in file order.
pub fn read_outcomes(run_dir: &Path) -> Result<Vec<DocOutcome>, DataError> {
    let path = run_dir.join(RESULTS_FILE);
    let f = File::open(&path).map_err(|e| DataError::io(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| DataError::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Format { line: i + 1, reason: e.to_string() })?);
    }
    Ok(out)
}

pub fn read_manifest(run_dir: &Path) -> Result<RunManifest, DataError> {
    let path = run_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| DataError::Format { line: 0, reason: e.to_string() })?;
    if m.schema_version != RESULTS_SCHEMA_VERSION {
        return Err(DataError::Format { line: 0, reason: format!("unsupported schema version {}", m.schema_version) });
    }
    Ok(m)
}

pub fn read_results(run_dir: &Path) -> Result<(RunManifest, Vec<DocOutcome>), DataError> {
    Ok((read_manifest(run_dir)?, read_outcomes(run_dir)?))
}
