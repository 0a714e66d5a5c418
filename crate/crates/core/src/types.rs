//! Domain types shared by every pipeline step and by evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::normalize::normalize;

/// Tasks whose mean input length exceeds this many characters are long-input.
pub const LONG_INPUT_THRESHOLD_CHARS: usize = 2_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IcdVersion {
    #[serde(rename = "9")]
    Icd9,
    #[serde(rename = "10")]
    Icd10,
}

impl IcdVersion {
    pub fn number(self) -> u8 {
        match self {
            IcdVersion::Icd9 => 9,
            IcdVersion::Icd10 => 10,
        }
    }
}

/// The extraction task a document is bound to.
/// Serialized as its [`TaskKind::name`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TaskKind {
    ClinicalTrialArm,
    MedicationStatus,
    IcdCode(IcdVersion),
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::ClinicalTrialArm,
        TaskKind::MedicationStatus,
        TaskKind::IcdCode(IcdVersion::Icd9),
        TaskKind::IcdCode(IcdVersion::Icd10),
    ];

    /// Stable machine name, also used for prompt catalog paths.
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ClinicalTrialArm => "clinical_trial_arm",
            TaskKind::MedicationStatus => "medication_status",
            TaskKind::IcdCode(IcdVersion::Icd9) => "icd9",
            TaskKind::IcdCode(IcdVersion::Icd10) => "icd10",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            TaskKind::ClinicalTrialArm => "Clinical trial arm extraction",
            TaskKind::MedicationStatus => "Medication status extraction",
            TaskKind::IcdCode(IcdVersion::Icd9) => "ICD-9 code extraction",
            TaskKind::IcdCode(IcdVersion::Icd10) => "ICD-10 code extraction",
        }
    }

    /// Default long-input flag. ICD tasks run on long notes.
    pub fn default_long_input(self) -> bool {
        matches!(self, TaskKind::IcdCode(_))
    }

    pub fn icd_version(self) -> Option<IcdVersion> {
        match self {
            TaskKind::IcdCode(v) => Some(v),
            _ => None,
        }
    }

    pub fn has_status(self) -> bool {
        self == TaskKind::MedicationStatus
    }

    /// Plural noun for the extracted element, as used in prompts.
    pub fn item_noun_plural(self) -> &'static str {
        match self {
            TaskKind::ClinicalTrialArm => "clinical trial arms",
            TaskKind::MedicationStatus => "medications",
            TaskKind::IcdCode(_) => "diagnoses",
        }
    }

    pub fn item_noun(self) -> &'static str {
        match self {
            TaskKind::ClinicalTrialArm => "clinical trial arm",
            TaskKind::MedicationStatus => "medication",
            TaskKind::IcdCode(_) => "diagnosis",
        }
    }

    /// What the input text is called in prompts.
    pub fn source_noun(self) -> &'static str {
        match self {
            TaskKind::ClinicalTrialArm => "abstract",
            TaskKind::MedicationStatus => "patient note",
            TaskKind::IcdCode(_) => "clinical note",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "clinical_trial_arm" | "arm" | "arms" => Ok(TaskKind::ClinicalTrialArm),
            "medication_status" | "medication" | "medications" => Ok(TaskKind::MedicationStatus),
            "icd9" | "icd_9" => Ok(TaskKind::IcdCode(IcdVersion::Icd9)),
            "icd10" | "icd_10" => Ok(TaskKind::IcdCode(IcdVersion::Icd10)),
            other => Err(CoreError::UnknownTask(other.to_string())),
        }
    }
}

impl TryFrom<String> for TaskKind {
    type Error = CoreError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TaskKind> for String {
    fn from(t: TaskKind) -> String {
        t.name().to_string()
    }
}

/// Whether a corpus with these input texts counts as long-input.
pub fn is_long_input<'a>(texts: impl IntoIterator<Item = &'a str>) -> bool {
    let (total, n) = texts
        .into_iter()
        .fold((0usize, 0usize), |(t, n), s| (t + s.chars().count(), n + 1));
    n > 0 && total as f64 / n as f64 > LONG_INPUT_THRESHOLD_CHARS as f64
}

/// One input text bound to a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub task: TaskKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, task: TaskKind) -> Result<Self, CoreError> {
        let id = id.into();
        let text = text.into();
        if text.is_empty() {
            return Err(CoreError::EmptyDocument(id));
        }
        Ok(Document { id, text, task, metadata: BTreeMap::new() })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusLabel {
    Active,
    Discontinued,
    Neither,
}

impl StatusLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StatusLabel::Active => "active",
            StatusLabel::Discontinued => "discontinued",
            StatusLabel::Neither => "neither",
        }
    }
}

impl fmt::Display for StatusLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StatusLabel {
    type Err = CoreError;

    /// Strict parse of the three canonical labels. Synonym handling lives in
    /// the response parser.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "active" => Ok(StatusLabel::Active),
            "discontinued" => Ok(StatusLabel::Discontinued),
            "neither" => Ok(StatusLabel::Neither),
            other => Err(CoreError::UnknownStatus(other.to_string())),
        }
    }
}

/// How a quote was localized in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    CaseInsensitive,
    Fuzzy,
    NotFound,
}

/// A model-provided quote localized to char offsets (Unicode scalar values)
/// in the document text. `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub quote: String,
    pub start: usize,
    pub end: usize,
    pub match_kind: MatchKind,
    /// Normalized edit distance of the located window; 0 for exact matches.
    #[serde(default)]
    pub distance: f64,
}

impl EvidenceSpan {
    pub fn not_found(quote: impl Into<String>) -> Self {
        EvidenceSpan { quote: quote.into(), start: 0, end: 0, match_kind: MatchKind::NotFound, distance: 1.0 }
    }

    pub fn is_found(&self) -> bool {
        self.match_kind != MatchKind::NotFound
    }

    /// Source text covered by the span.
    pub fn slice<'a>(&self, text: &'a str) -> &'a str {
        char_slice(text, self.start, self.end)
    }
}

/// Slice `text` by char offsets, clamping to the text length.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let from = indices.nth(start).unwrap_or(text.len());
    let to = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        from
    };
    &text[from..to]
}

/// Which step introduced an item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "step")]
pub enum Origin {
    Original,
    Omission { iteration: u32 },
    MegaPrompt,
}

/// Audit flags attached to an item by lenient parsing or verification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ItemFlag {
    /// The model's status string did not map to a known label.
    UnknownStatus { raw: String },
    /// A later step proposed a different status; the earliest one was kept.
    StatusConflict { proposed: StatusLabel },
    /// No quote was returned, or it could not be localized.
    Unsupported,
    /// The prune verdict matched neither vocabulary; the item was kept.
    AmbiguousVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractedItem {
    pub raw_value: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<StatusLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EvidenceSpan>,
    pub origin: Origin,
    #[serde(default)]
    pub pruned: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub icd_code: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<ItemFlag>,
}

impl ExtractedItem {
    pub fn new(raw_value: impl Into<String>, origin: Origin) -> Self {
        let raw_value = raw_value.into();
        ExtractedItem {
            value: normalize(&raw_value),
            raw_value,
            status: None,
            evidence: None,
            origin,
            pruned: false,
            prune_reason: None,
            icd_code: None,
            flags: Vec::new(),
        }
    }

    pub fn with_status(mut self, status: StatusLabel) -> Self {
        self.status = Some(status);
        self
    }

    /// Dedup key. Medication items key on the name alone, so a second status
    /// for the same medication is a conflict rather than a new item.
    pub fn key(&self) -> &str {
        &self.value
    }

    /// Mark the item pruned. An empty reason is replaced by a placeholder so
    /// that a pruned item always carries a reason.
    pub fn prune(&mut self, reason: &str) {
        let reason = reason.trim();
        self.pruned = true;
        self.prune_reason = Some(if reason.is_empty() { "pruned without explanation".to_string() } else { reason.to_string() });
    }

    pub fn has_flag(&self, pred: impl Fn(&ItemFlag) -> bool) -> bool {
        self.flags.iter().any(pred)
    }
}

/// A status disagreement detected while merging.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusConflict {
    pub key: String,
    pub kept: StatusLabel,
    pub proposed: StatusLabel,
}

/// Result of [`ExtractionSet::merge`].
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub set: ExtractionSet,
    pub new_items: usize,
    pub conflicts: Vec<StatusConflict>,
}

/// Insertion-ordered set of non-pruned items, unique by key.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<ExtractedItem>", into = "Vec<ExtractedItem>")]
pub struct ExtractionSet {
    items: Vec<ExtractedItem>,
    index: HashMap<String, usize>,
}

impl ExtractionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a set from items, dropping pruned items, empty values, and
    /// later duplicates.
    pub fn from_items(items: impl IntoIterator<Item = ExtractedItem>) -> Self {
        let mut set = ExtractionSet::new();
        for item in items {
            set.insert(item);
        }
        set
    }

    /// Insert an item if its key is new. Returns whether it was inserted.
    pub fn insert(&mut self, item: ExtractedItem) -> bool {
        if item.pruned || item.value.is_empty() || self.index.contains_key(item.key()) {
            return false;
        }
        self.index.insert(item.key().to_string(), self.items.len());
        self.items.push(item);
        true
    }

    pub fn items(&self) -> &[ExtractedItem] {
        &self.items
    }

    pub fn items_mut(&mut self) -> impl Iterator<Item = &mut ExtractedItem> {
        self.items.iter_mut()
    }

    pub fn into_items(self) -> Vec<ExtractedItem> {
        self.items
    }

    pub fn get(&self, key: &str) -> Option<&ExtractedItem> {
        self.index.get(key).map(|&i| &self.items[i])
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut ExtractedItem> {
        self.index.get(key).copied().map(move |i| &mut self.items[i])
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn keys(&self) -> Vec<String> {
        self.items.iter().map(|i| i.key().to_string()).collect()
    }

    /// Append every addition whose key is not already present.
    ///
    /// Status disagreements on an existing key keep the existing (earlier)
    /// status; the conflict is flagged on the item and reported.
    pub fn merge(&self, additions: impl IntoIterator<Item = ExtractedItem>) -> MergeOutcome {
        let mut set = self.clone();
        let mut new_items = 0;
        let mut conflicts = Vec::new();
        for add in additions {
            if let Some(existing) = set.get_mut(add.key()) {
                if let (Some(kept), Some(proposed)) = (existing.status, add.status) {
                    if kept != proposed {
                        let flag = ItemFlag::StatusConflict { proposed };
                        if !existing.flags.contains(&flag) {
                            existing.flags.push(flag);
                        }
                        conflicts.push(StatusConflict { key: existing.key().to_string(), kept, proposed });
                    }
                }
                continue;
            }
            if set.insert(add) {
                new_items += 1;
            }
        }
        MergeOutcome { set, new_items, conflicts }
    }
}

impl From<Vec<ExtractedItem>> for ExtractionSet {
    fn from(items: Vec<ExtractedItem>) -> Self {
        ExtractionSet::from_items(items)
    }
}

impl From<ExtractionSet> for Vec<ExtractedItem> {
    fn from(set: ExtractionSet) -> Self {
        set.items
    }
}

impl<'a> IntoIterator for &'a ExtractionSet {
    type Item = &'a ExtractedItem;
    type IntoIter = std::slice::Iter<'a, ExtractedItem>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set_of(values: &[&str]) -> ExtractionSet {
        ExtractionSet::from_items(values.iter().map(|v| ExtractedItem::new(*v, Origin::Original)))
    }

    fn omission(values: &[&str]) -> Vec<ExtractedItem> {
        values.iter().map(|v| ExtractedItem::new(*v, Origin::Omission { iteration: 1 })).collect()
    }

    #[test]
    fn merge_appends_new_items() {
        let base = set_of(&["hypertension"]);
        let out = base.merge(omission(&["Right adrenal mass", "Liver fibrosis"]));
        assert_eq!(out.set.keys(), vec!["hypertension", "right adrenal mass", "liver fibrosis"]);
        assert_eq!(out.new_items, 2);
    }

    #[test]
    fn merge_dedups_case_insensitively() {
        let out = set_of(&["a"]).merge(omission(&["A"]));
        assert_eq!(out.set.keys(), vec!["a"]);
        assert_eq!(out.new_items, 0);
    }

    #[test]
    fn merge_empty() {
        let out = ExtractionSet::new().merge(Vec::new());
        assert!(out.set.is_empty());
        assert_eq!(out.new_items, 0);
    }

    #[test]
    fn status_conflict_keeps_earliest() {
        let base = ExtractionSet::from_items([ExtractedItem::new("aspirin", Origin::Original).with_status(StatusLabel::Active)]);
        let add = ExtractedItem::new("Aspirin", Origin::Omission { iteration: 1 }).with_status(StatusLabel::Discontinued);
        let out = base.merge([add]);
        assert_eq!(out.new_items, 0);
        assert_eq!(out.conflicts.len(), 1);
        let item = out.set.get("aspirin").unwrap();
        assert_eq!(item.status, Some(StatusLabel::Active));
        assert!(item.has_flag(|f| matches!(f, ItemFlag::StatusConflict { .. })));
    }

    #[test]
    fn pruned_items_carry_reason() {
        let mut item = ExtractedItem::new("liver fibrosis", Origin::Omission { iteration: 1 });
        item.prune("   ");
        assert!(item.pruned);
        assert!(!item.prune_reason.unwrap().is_empty());
    }

    #[test]
    fn document_rejects_empty_text() {
        assert!(Document::new("d1", "", TaskKind::MedicationStatus).is_err());
    }

    #[test]
    fn task_round_trips_through_name() {
        for task in TaskKind::ALL {
            assert_eq!(task.name().parse::<TaskKind>().unwrap(), task);
        }
        assert!(TaskKind::IcdCode(IcdVersion::Icd10).default_long_input());
        assert!(!TaskKind::MedicationStatus.default_long_input());
    }

    #[test]
    fn long_input_threshold() {
        let short = "x".repeat(2_000);
        let long = "x".repeat(2_001);
        assert!(!is_long_input([short.as_str()]));
        assert!(is_long_input([long.as_str()]));
        assert!(!is_long_input(std::iter::empty()));
    }

    #[test]
    fn char_slice_handles_multibyte() {
        let text = "caf\u{e9} au lait";
        assert_eq!(char_slice(text, 2, 6), "f\u{e9} a");
        assert_eq!(char_slice(text, 0, 0), "");
        assert_eq!(char_slice(text, 10, 20), "it");
    }

    #[test]
    fn serde_round_trip_preserves_index() {
        let set = set_of(&["a", "b"]);
        let json = serde_json::to_string(&set).unwrap();
        let back: ExtractionSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.keys(), set.keys());
        assert!(back.contains("b"));
    }

    proptest! {
        #[test]
        fn merge_is_idempotent_and_monotone(
            base in proptest::collection::vec("[a-d]{1,2}", 0..8),
            adds in proptest::collection::vec("[a-dA-D]{1,2}", 0..8),
        ) {
            let base: Vec<&str> = base.iter().map(String::as_str).collect();
            let adds: Vec<&str> = adds.iter().map(String::as_str).collect();
            let s = set_of(&base);
            let once = s.merge(omission(&adds)).set;
            let twice = once.merge(omission(&adds));
            prop_assert_eq!(twice.set.keys(), once.keys());
            prop_assert_eq!(twice.new_items, 0);
            let once_keys = once.keys();
            for k in s.keys() {
                prop_assert!(once_keys.contains(&k));
            }
            let mut sorted = once_keys.clone();
            sorted.sort();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), once_keys.len());
        }
    }
}
