//! Dataset files, run result persistence, and the HTML audit report.
//!
//! Datasets and results are line-delimited JSON. See `docs/formats.md` for
//! the field-by-field schemas.

mod dataset;
mod report;
mod results;

use std::path::Path;

use thiserror::Error;

pub use dataset::{load_dataset, parse_dataset, write_dataset, Dataset, DatasetRecord, Split};
pub use report::{emit_report, escape_html, render_report, ReportOptions};
pub use results::{
    read_manifest, read_outcomes, read_results, strip_traces, write_results, ResultWriter, RunManifest, MANIFEST_FILE,
    RESULTS_FILE, RESULTS_SCHEMA_VERSION,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("duplicate doc_id `{doc_id}` on line {line}")]
    DuplicateDocId { doc_id: String, line: usize },
    #[error("run `{0}` already exists; choose another run id")]
    RunExists(String),
    #[error("serialization failed: {0}")]
    Serialize(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        DataError::Io { path: path.display().to_string(), message: e.to_string() }
    }
}
