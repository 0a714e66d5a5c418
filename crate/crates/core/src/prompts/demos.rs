use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PromptError, PromptTemplate};

/// One worked example: an input text and its gold answer rendered in the
/// same format the parser expects from the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub examples: Vec<Demonstration>,
    pub seed: u64,
    pub k: usize,
}

/// Draw `k` examples without replacement. The same pool, `k`, and seed give
/// the same examples in the same order on every platform.
pub fn sample_demonstrations(pool: &[Demonstration], k: usize, seed: u64) -> Result<DemonstrationSet, PromptError> {
    if pool.len() < k {
        return Err(PromptError::PoolTooSmall { pool: pool.len(), k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect();
    Ok(DemonstrationSet { examples, seed, k })
}

/// Render demonstrations with the framing used around `{input}` in the
/// original-step template, so a demonstration reads exactly like the real
/// query followed by its answer.
pub fn render_demonstrations(set: &DemonstrationSet, original: &PromptTemplate) -> String {
    if set.examples.is_empty() {
        return String::new();
    }
    let after_demos = original.body.split_once("{demonstrations}").map_or(original.body.as_str(), |(_, r)| r);
    let (prefix, suffix) = after_demos.split_once("{input}").unwrap_or(("", ""));
    let suffix = suffix.trim_end();
    let mut out = String::new();
    for ex in &set.examples {
        out.push_str(prefix);
        out.push_str(ex.input.trim());
        out.push_str(suffix);
        out.push('\n');
        out.push_str(ex.output.trim());
        out.push_str("\n\n");
    }
    out
}
