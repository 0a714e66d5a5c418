use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::backend::{Mode, DEFAULT_MAX_TOKENS_EXTRACT, DEFAULT_MAX_TOKENS_VERDICT, DEFAULT_TEMPERATURE};
use crate::parsing::DEFAULT_FUZZY_THRESHOLD;
use crate::types::TaskKind;

/// Steps that can be switched off. The original extraction always runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptionalStep {
    Omission,
    Evidence,
    Prune,
}

/// The enabled optional steps.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepSelection(pub BTreeSet<OptionalStep>);

impl StepSelection {
    pub fn original_only() -> Self {
        StepSelection(BTreeSet::new())
    }

    pub fn full() -> Self {
        StepSelection([OptionalStep::Omission, OptionalStep::Evidence, OptionalStep::Prune].into())
    }

    pub fn of(steps: &[OptionalStep]) -> Self {
        StepSelection(steps.iter().copied().collect())
    }

    pub fn has(&self, step: OptionalStep) -> bool {
        self.0.contains(&step)
    }

    /// The four ablation rows: original only, with omission, with
    /// evidence-free prune, and the full chain.
    pub fn ablation_rows() -> [(&'static str, StepSelection); 4] {
        [
            ("Original", StepSelection::original_only()),
            ("+ Omission", StepSelection::of(&[OptionalStep::Omission])),
            ("+ Prune", StepSelection::of(&[OptionalStep::Prune])),
            ("+ Full SV", StepSelection::full()),
        ]
    }
}

impl fmt::Display for StepSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names = vec!["original"];
        for s in &self.0 {
            names.push(match s {
                OptionalStep::Omission => "omission",
                OptionalStep::Evidence => "evidence",
                OptionalStep::Prune => "prune",
            });
        }
        f.write_str(&names.join(","))
    }
}

impl FromStr for StepSelection {
    type Err = PipelineError;

    /// Comma-separated step names; `full` enables everything and `original`
    /// is accepted but implied.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_lowercase().as_str() {
                "original" => {}
                "omission" => {
                    set.insert(OptionalStep::Omission);
                }
                "evidence" => {
                    set.insert(OptionalStep::Evidence);
                }
                "prune" => {
                    set.insert(OptionalStep::Prune);
                }
                "full" | "all" | "sv" => return Ok(StepSelection::full()),
                other => return Err(PipelineError::Config(format!("unknown step `{other}`"))),
            }
        }
        Ok(StepSelection(set))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// One call per item with its quote.
    #[default]
    PerItem,
    /// One call judging all items.
    Batched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub task: TaskKind,
    pub model_id: String,
    pub mode: Mode,
    pub steps: StepSelection,
    pub omission_min_iters: u32,
    pub omission_max_iters: u32,
    pub demonstrations_k: usize,
    pub temperature: f64,
    pub max_tokens_extract: u32,
    pub max_tokens_verdict: u32,
    pub seed: u64,
    pub prune_mode: PruneMode,
    pub fuzzy_threshold: f64,
    pub map_icd: bool,
}

impl PipelineConfig {
    /// Defaults for a task. Long-input tasks repeat omission at least five
    /// times and get no demonstrations.
    pub fn for_task(task: TaskKind, long_input: bool) -> Self {
        PipelineConfig {
            task,
            model_id: "mock".into(),
            mode: Mode::Chat,
            steps: StepSelection::full(),
            omission_min_iters: if long_input { 5 } else { 1 },
            omission_max_iters: 10,
            demonstrations_k: if long_input { 0 } else { 5 },
            temperature: DEFAULT_TEMPERATURE,
            max_tokens_extract: DEFAULT_MAX_TOKENS_EXTRACT,
            max_tokens_verdict: DEFAULT_MAX_TOKENS_VERDICT,
            seed: 0,
            prune_mode: PruneMode::PerItem,
            fuzzy_threshold: DEFAULT_FUZZY_THRESHOLD,
            map_icd: task.icd_version().is_some(),
        }
    }

    pub fn with_steps(mut self, steps: StepSelection) -> Self {
        self.steps = steps;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.omission_min_iters < 1 || self.omission_min_iters > self.omission_max_iters {
            return Err(PipelineError::Config(format!(
                "need 1 <= omission_min_iters ({}) <= omission_max_iters ({})",
                self.omission_min_iters, self.omission_max_iters
            )));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(PipelineError::Config(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_tokens_extract == 0 || self.max_tokens_verdict == 0 {
            return Err(PipelineError::Config("token limits must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.fuzzy_threshold) {
            return Err(PipelineError::Config(format!("fuzzy threshold {} outside [0, 1]", self.fuzzy_threshold)));
        }
        if self.map_icd && self.task.icd_version().is_none() {
            return Err(PipelineError::Config(format!("ICD mapping requested for non-ICD task {}", self.task)));
        }
        Ok(())
    }

    /// Whether prune conditions on evidence quotes (evidence step enabled)
    /// or checks items against the note directly.
    pub fn prune_uses_evidence(&self) -> bool {
        self.steps.has(OptionalStep::Evidence)
    }
}
