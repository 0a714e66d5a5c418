use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{PromptError, PromptStep, PromptTemplate};
use crate::types::TaskKind;

/// First line of the verification postscript appended to the mega-prompt.
pub const MEGAPROMPT_POSTSCRIPT_HEADER: &str = "Before answering, check your list step by step:";

macro_rules! builtin_files {
    ($($task:literal => [$($name:literal),*]),* $(,)?) => {
        &[$($((concat!($task, "/", $name), include_str!(concat!("../../prompts/v1/", $task, "/", $name, ".txt")))),*),*]
    };
}

const BUILTIN_VERSION: &str = include_str!("../../prompts/v1/VERSION");

const BUILTIN: &[(&str, &str)] = builtin_files! {
    "clinical_trial_arm" => ["original", "omission", "evidence", "prune", "prune_direct", "prune_batch"],
    "medication_status" => ["original", "omission", "evidence", "prune", "prune_direct", "prune_batch"],
    "icd9" => ["original", "omission", "evidence", "prune", "prune_direct", "prune_batch", "icd_map"],
    "icd10" => ["original", "omission", "evidence", "prune", "prune_direct", "prune_batch", "icd_map"],
};

/// Immutable set of templates keyed by id (`<task>/<name>`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCatalog {
    version: String,
    templates: BTreeMap<String, PromptTemplate>,
    digest: String,
}

impl PromptCatalog {
    /// The catalog compiled into the binary.
    pub fn builtin() -> Self {
        let sources = BUILTIN.iter().map(|(id, text)| (id.to_string(), text.to_string()));
        Self::from_sources(BUILTIN_VERSION.trim(), sources).expect("built-in prompt catalog is valid")
    }

    /// Load `<dir>/VERSION` and every `<dir>/<task>/<name>.txt`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let io = |p: &Path, e: std::io::Error| PromptError::Catalog(format!("{}: {e}", p.display()));
        let version_path = dir.join("VERSION");
        let version = fs::read_to_string(&version_path).map_err(|e| io(&version_path, e))?;

        let mut sources = Vec::new();
        let mut task_dirs: Vec<_> = fs::read_dir(dir).map_err(|e| io(dir, e))?.collect::<Result<_, _>>().map_err(|e| io(dir, e))?;
        task_dirs.sort_by_key(|e| e.file_name());
        for task_dir in task_dirs {
            let path = task_dir.path();
            if !path.is_dir() {
                continue;
            }
            let task = task_dir.file_name().to_string_lossy().into_owned();
            let mut files: Vec<_> = fs::read_dir(&path).map_err(|e| io(&path, e))?.collect::<Result<_, _>>().map_err(|e| io(&path, e))?;
            files.sort_by_key(|e| e.file_name());
            for file in files {
                let fp = file.path();
                if fp.extension().and_then(|e| e.to_str()) != Some("txt") {
                    continue;
                }
                let stem = fp.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let text = fs::read_to_string(&fp).map_err(|e| io(&fp, e))?;
                sources.push((format!("{task}/{stem}"), text));
            }
        }
        Self::from_sources(version.trim(), sources)
    }

    /// Build a catalog from `(expected_id, file_text)` pairs.
    pub fn from_sources(version: &str, sources: impl IntoIterator<Item = (String, String)>) -> Result<Self, PromptError> {
        if version.is_empty() {
            return Err(PromptError::Catalog("empty catalog version".into()));
        }
        let mut templates = BTreeMap::new();
        let mut hasher = Sha256::new();
        hasher.update(version.as_bytes());
        let mut sources: Vec<(String, String)> = sources.into_iter().collect();
        sources.sort();
        for (expected_id, text) in sources {
            let t = parse_template(&text).map_err(|e| PromptError::Catalog(format!("{expected_id}: {e}")))?;
            if t.id != expected_id {
                return Err(PromptError::Catalog(format!("file {expected_id} declares id `{}`", t.id)));
            }
            hasher.update((text.len() as u64).to_le_bytes());
            hasher.update(text.as_bytes());
            templates.insert(t.id.clone(), t);
        }
        for task in TaskKind::ALL {
            for name in ["original", "omission", "evidence", "prune", "prune_direct", "prune_batch"] {
                let id = format!("{}/{name}", task.name());
                if !templates.contains_key(&id) {
                    return Err(PromptError::Catalog(format!("missing template `{id}`")));
                }
            }
            if task.icd_version().is_some() && !templates.contains_key(&format!("{}/icd_map", task.name())) {
                return Err(PromptError::Catalog(format!("missing template `{}/icd_map`", task.name())));
            }
        }
        Ok(PromptCatalog { version: version.to_string(), templates, digest: hex::encode(hasher.finalize()) })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// SHA-256 over the version and every template file, for run manifests.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    /// Template `<task>/<name>`, e.g. `get(MedicationStatus, "prune_direct")`.
    pub fn get(&self, task: TaskKind, name: &str) -> Result<&PromptTemplate, PromptError> {
        let id = format!("{}/{name}", task.name());
        self.templates.get(&id).ok_or(PromptError::UnknownTemplate(id))
    }

    pub fn templates(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }
}

fn parse_template(text: &str) -> Result<PromptTemplate, String> {
    let text = text.replace("\r\n", "\n");
    let (header, rest) = text.split_once("\n---\n").ok_or("missing `---` header separator")?;
    let mut fields = BTreeMap::new();
    for line in header.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once(':').ok_or_else(|| format!("bad header line `{line}`"))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let field = |k: &str| fields.get(k).cloned().ok_or_else(|| format!("missing header field `{k}`"));
    let id = field("id")?;
    let step: PromptStep = field("step")?.parse().map_err(|e: PromptError| e.to_string())?;
    let task: TaskKind = field("task")?.parse().map_err(|e: crate::error::CoreError| e.to_string())?;

    let rest = rest.trim_end_matches('\n');
    let (system, body) = match rest.strip_prefix("[system]\n") {
        Some(r) => {
            let (s, b) = r.split_once("\n[user]\n").ok_or("`[system]` section without `[user]` section")?;
            (s.trim().to_string(), b.to_string())
        }
        None => (String::new(), rest.strip_prefix("[user]\n").unwrap_or(rest).to_string()),
    };
    Ok(PromptTemplate { id, step, task, system, body })
}

/// Single-call baseline: the original-step instructions followed by a
/// numbered list asking the model to find misses, ground each item, and
/// verify each item before giving one final list.
pub fn build_megaprompt(catalog: &PromptCatalog, task: TaskKind) -> Result<PromptTemplate, PromptError> {
    let original = catalog.get(task, "original")?;
    for name in ["omission", "evidence", "prune"] {
        catalog.get(task, name)?;
    }
    let plural = task.item_noun_plural();
    let noun = task.item_noun();
    let source = task.source_noun();
    let postscript = format!(
        "{MEGAPROMPT_POSTSCRIPT_HEADER}\n\
         (1) Find any {plural} in the {source} that were missed, and add them.\n\
         (2) For each {noun}, find the span of text in the {source} that provides evidence for it.\n\
         (3) Verify each {noun} against its evidence and remove any that are not correct.\n\
         Answer with only the final list, in the same format."
    );
    Ok(PromptTemplate {
        id: format!("{}/mega_prompt", task.name()),
        step: PromptStep::MegaPrompt,
        task,
        system: format!("{}\n\n{postscript}", original.system),
        body: original.body.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Mode;
    use crate::prompts::{placeholders, render, Bindings};

    #[test]
    fn builtin_covers_every_task_and_step() {
        let c = PromptCatalog::builtin();
        assert_eq!(c.version(), "v1");
        for task in TaskKind::ALL {
            assert_eq!(c.get(task, "original").unwrap().step, PromptStep::Original);
            assert_eq!(c.get(task, "omission").unwrap().step, PromptStep::Omission);
            assert_eq!(c.get(task, "evidence").unwrap().step, PromptStep::Evidence);
            assert_eq!(c.get(task, "prune").unwrap().step, PromptStep::Prune);
            assert_eq!(c.get(task, "original").unwrap().task, task);
        }
        assert!(matches!(c.get(TaskKind::MedicationStatus, "icd_map"), Err(PromptError::UnknownTemplate(_))));
    }

    #[test]
    fn builtin_placeholders() {
        let c = PromptCatalog::builtin();
        for task in TaskKind::ALL {
            assert_eq!(placeholders(&c.get(task, "original").unwrap().body), vec!["demonstrations", "input"]);
            assert_eq!(placeholders(&c.get(task, "omission").unwrap().body), vec!["input", "items"]);
            assert_eq!(placeholders(&c.get(task, "prune").unwrap().body), vec!["input", "item", "quote"]);
            assert_eq!(placeholders(&c.get(task, "prune_direct").unwrap().body), vec!["input", "item"]);
            assert_eq!(placeholders(&c.get(task, "prune_batch").unwrap().body), vec!["input", "evidence_list"]);
            for t in c.templates() {
                assert!(placeholders(&t.system).is_empty(), "{} has placeholders in instructions", t.id);
            }
        }
    }

    #[test]
    fn digest_is_stable_and_content_sensitive() {
        let a = PromptCatalog::builtin();
        assert_eq!(a.digest(), PromptCatalog::builtin().digest());
        let mut sources: Vec<(String, String)> = BUILTIN.iter().map(|(i, t)| (i.to_string(), t.to_string())).collect();
        sources[0].1.push_str(" changed");
        let b = PromptCatalog::from_sources("v1", sources).unwrap();
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn load_dir_round_trips_builtin() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("VERSION"), "v1\n").unwrap();
        for (id, text) in BUILTIN {
            let (task, name) = id.split_once('/').unwrap();
            fs::create_dir_all(dir.path().join(task)).unwrap();
            fs::write(dir.path().join(task).join(format!("{name}.txt")), text).unwrap();
        }
        assert_eq!(PromptCatalog::load_dir(dir.path()).unwrap(), PromptCatalog::builtin());
    }

    #[test]
    fn mismatched_id_is_rejected() {
        let mut sources: Vec<(String, String)> = BUILTIN.iter().map(|(i, t)| (i.to_string(), t.to_string())).collect();
        sources[0].0 = "clinical_trial_arm/renamed".into();
        assert!(matches!(PromptCatalog::from_sources("v1", sources), Err(PromptError::Catalog(_))));
    }

    #[test]
    fn template_without_system_section() {
        let t = parse_template("id: icd9/x\nstep: original\ntask: icd9\n---\nNote: {input}\n").unwrap();
        assert_eq!(t.system, "");
        assert_eq!(t.body, "Note: {input}");
    }

    #[test]
    fn megaprompt_for_medications() {
        let c = PromptCatalog::builtin();
        let m = build_megaprompt(&c, TaskKind::MedicationStatus).unwrap();
        assert_eq!(m.step, PromptStep::MegaPrompt);
        assert!(m.system.contains("(1) Find any medications in the patient note that were missed"));
        assert!(m.system.contains("(2) For each medication, find the span"));
        assert!(m.system.contains("(3) Verify each medication"));

        let original = c.get(TaskKind::MedicationStatus, "original").unwrap();
        let bindings: Bindings = [("demonstrations", ""), ("input", "note")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let text = render(&m, &bindings, Mode::Completion).unwrap().text();
        assert!(text.starts_with(&original.system));
    }

    #[test]
    fn megaprompt_substitutes_nouns() {
        let m = build_megaprompt(&PromptCatalog::builtin(), TaskKind::ClinicalTrialArm).unwrap();
        assert!(m.system.contains("(1) Find any clinical trial arms in the abstract that were missed"));
        assert!(!m.system.contains("medication"));
    }
}
