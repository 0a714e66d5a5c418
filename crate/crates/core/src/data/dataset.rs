use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::DataError;
use crate::evaluation::{GoldAnnotation, GoldItem};
use crate::parsing::render_as_bullets;
use crate::prompts::Demonstration;
use crate::types::{Document, StatusLabel, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Split {
    /// Available as few-shot demonstrations, never evaluated.
    #[serde(rename = "demo-pool")]
    DemoPool,
    #[default]
    #[serde(rename = "eval")]
    Eval,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub doc_id: String,
    pub text: String,
    pub task: TaskKind,
    pub gold: Vec<GoldItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_spans: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    pub split: Split,
}

/// Raw line shape. `gold` may be a list of `{value, status?}` objects, a
/// list of strings, or a `{name: status}` map.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    doc_id: String,
    text: String,
    #[serde(default)]
    task: Option<String>,
    gold: Value,
    #[serde(default)]
    gold_spans: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    split: Split,
}

impl DatasetRecord {
    pub fn document(&self) -> Document {
        Document { id: self.doc_id.clone(), text: self.text.clone(), task: self.task, metadata: BTreeMap::new() }
    }

    pub fn gold_annotation(&self) -> GoldAnnotation {
        GoldAnnotation::new(self.doc_id.clone(), self.gold.clone(), self.gold_spans.clone())
    }

    /// The gold answer in the same bulleted format the parser reads.
    pub fn gold_rendering(&self) -> String {
        if self.gold.is_empty() {
            return "- none".to_string();
        }
        let lines: Vec<String> = self
            .gold
            .iter()
            .map(|g| match g.status {
                Some(s) if self.task.has_status() => format!("{}: {s}", g.value),
                _ => g.value.clone(),
            })
            .collect();
        render_as_bullets(&lines)
    }

    pub fn demonstration(&self) -> Demonstration {
        Demonstration { input: self.text.clone(), output: self.gold_rendering() }
    }
}

/// Records that loaded, plus lines skipped in lenient mode.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub skipped: Vec<(usize, String)>,
}

impl Dataset {
    pub fn eval_records(&self) -> impl Iterator<Item = &DatasetRecord> {
        self.records.iter().filter(|r| r.split == Split::Eval)
    }

    pub fn demo_pool(&self) -> Vec<Demonstration> {
        self.records.iter().filter(|r| r.split == Split::DemoPool).map(DatasetRecord::demonstration).collect()
    }

    pub fn gold(&self) -> Vec<GoldAnnotation> {
        self.eval_records().map(DatasetRecord::gold_annotation).collect()
    }
}

fn parse_gold(gold: Value, task: TaskKind) -> Result<Vec<GoldItem>, String> {
    let status_of = |raw: &str| raw.parse::<StatusLabel>().map_err(|e| e.to_string());
    let mut items = Vec::new();
    match gold {
        Value::Array(entries) => {
            for e in entries {
                match e {
                    Value::String(s) => items.push(GoldItem::new(&s, None)),
                    Value::Object(mut o) => {
                        let value = match o.remove("value") {
                            Some(Value::String(s)) => s,
                            _ => return Err("gold entry needs a string `value`".into()),
                        };
                        let status = match o.remove("status") {
                            None | Some(Value::Null) => None,
                            Some(Value::String(s)) => Some(status_of(&s)?),
                            Some(other) => return Err(format!("status must be a string, got {other}")),
                        };
                        if let Some(k) = o.keys().next() {
                            return Err(format!("unknown gold entry field `{k}`"));
                        }
                        items.push(GoldItem::new(&value, status));
                    }
                    other => return Err(format!("gold entries must be strings or objects, got {other}")),
                }
            }
        }
        Value::Object(map) => {
            for (name, status) in map {
                let status = match status {
                    Value::String(s) => status_of(&s)?,
                    other => return Err(format!("status for `{name}` must be a string, got {other}")),
                };
                items.push(GoldItem::new(&name, Some(status)));
            }
        }
        other => return Err(format!("`gold` must be a list or a map, got {other}")),
    }
    if !task.has_status() && items.iter().any(|i| i.status.is_some()) {
        return Err(format!("task {task} does not take status labels"));
    }
    if items.iter().any(|i| i.value.is_empty()) {
        return Err("empty gold value".into());
    }
    let mut seen = HashSet::new();
    items.retain(|i| seen.insert(i.value.clone()));
    Ok(items)
}

fn parse_line(line: &str, task: TaskKind) -> Result<DatasetRecord, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.doc_id.trim().is_empty() {
        return Err("empty doc_id".into());
    }
    if raw.text.trim().is_empty() {
        return Err("empty text".into());
    }
    if let Some(t) = &raw.task {
        let t: TaskKind = t.parse().map_err(|e: crate::error::CoreError| e.to_string())?;
        if t != task {
            return Err(format!("record is for task {t}, expected {task}"));
        }
    }
    let len = raw.text.chars().count();
    if let Some(spans) = &raw.gold_spans {
        if let Some(&(s, e)) = spans.iter().find(|&&(s, e)| s >= e || e > len) {
            return Err(format!("gold span [{s}, {e}) is outside 0 <= start < end <= {len}"));
        }
    }
    Ok(DatasetRecord {
        gold: parse_gold(raw.gold, task)?,
        doc_id: raw.doc_id,
        text: raw.text,
        task,
        gold_spans: raw.gold_spans,
        split: raw.split,
    })
}

/// Load and validate a line-delimited dataset. Gold values are normalized.
/// A malformed line is fatal unless `lenient`, in which case it is skipped
/// and reported with its 1-based line number. Duplicate ids are always fatal.
pub fn load_dataset(path: &Path, task: TaskKind, lenient: bool) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_dataset(&text, task, lenient)
}

pub fn parse_dataset(text: &str, task: TaskKind, lenient: bool) -> Result<Dataset, DataError> {
    let mut out = Dataset::default();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, task) {
            Ok(rec) => {
                if !ids.insert(rec.doc_id.clone()) {
                    return Err(DataError::DuplicateDocId { doc_id: rec.doc_id, line: line_no });
                }
                out.records.push(rec);
            }
            Err(reason) if lenient => out.skipped.push((line_no, reason)),
            Err(reason) => return Err(DataError::Format { line: line_no, reason }),
        }
    }
    Ok(out)
}

/// Write records in the format [`load_dataset`] reads.
pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| DataError::Serialize(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&buf).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARMS: &str = r#"{"doc_id":"a1","text":"Propofol versus droperidol versus placebo for nausea.","gold":["propofol","droperidol","placebo"]}"#;

    #[test]
    fn arm_record() {
        let d = parse_dataset(ARMS, TaskKind::ClinicalTrialArm, false).unwrap();
        let r = &d.records[0];
        assert_eq!(r.gold.iter().map(|g| g.value.as_str()).collect::<Vec<_>>(), vec!["propofol", "droperidol", "placebo"]);
        assert_eq!(r.split, Split::Eval);
    }

    #[test]
    fn status_map() {
        let line = r#"{"doc_id":"m1","text":"Stopped aspirin, continue plavix.","gold":{"aspirin":"discontinued","Plavix":"active"},"split":"demo-pool"}"#;
        let d = parse_dataset(line, TaskKind::MedicationStatus, false).unwrap();
        let r = &d.records[0];
        // Map entries come back in key order, uppercase first.
        assert_eq!(r.gold, vec![GoldItem::new("plavix", Some(StatusLabel::Active)), GoldItem::new("aspirin", Some(StatusLabel::Discontinued))]);
        assert_eq!(r.split, Split::DemoPool);
        assert_eq!(r.gold_rendering(), "- plavix: active\n- aspirin: discontinued");
    }

    #[test]
    fn duplicate_id() {
        let text = format!("{ARMS}\n{ARMS}\n");
        assert_eq!(
            parse_dataset(&text, TaskKind::ClinicalTrialArm, true).unwrap_err(),
            DataError::DuplicateDocId { doc_id: "a1".into(), line: 2 }
        );
    }

    #[test]
    fn malformed_lines_strict_and_lenient() {
        let text = format!("{ARMS}\nnot json\n{}\n", r#"{"doc_id":"a2","text":"x","gold":[],"gold_spans":[[0,5]]}"#);
        assert!(matches!(parse_dataset(&text, TaskKind::ClinicalTrialArm, false), Err(DataError::Format { line: 2, .. })));
        let d = parse_dataset(&text, TaskKind::ClinicalTrialArm, true).unwrap();
        assert_eq!(d.records.len(), 1);
        assert_eq!(d.skipped.iter().map(|s| s.0).collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn rejects_wrong_task_and_status_on_arms() {
        let line = r#"{"doc_id":"a","text":"t","task":"icd9","gold":["401.9"]}"#;
        assert!(parse_dataset(line, TaskKind::ClinicalTrialArm, false).is_err());
        let line = r#"{"doc_id":"a","text":"t","gold":[{"value":"x","status":"active"}]}"#;
        assert!(parse_dataset(line, TaskKind::ClinicalTrialArm, false).is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let records = vec![DatasetRecord {
            doc_id: "x".into(),
            text: "caf\u{e9} \"quoted\"\nnew line".into(),
            task: TaskKind::MedicationStatus,
            gold: vec![GoldItem::new("aspirin", Some(StatusLabel::Neither))],
            gold_spans: Some(vec![(0, 4)]),
            split: Split::DemoPool,
        }];
        write_dataset(&path, &records).unwrap();
        assert_eq!(load_dataset(&path, TaskKind::MedicationStatus, false).unwrap().records, records);
    }
}
