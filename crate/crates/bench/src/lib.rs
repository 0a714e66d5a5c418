//! Deterministic inputs for the benchmarks under `benches/`.

/// A note of roughly `len` bytes built from a small clinical vocabulary.
/// The same `len` always yields the same text.
pub fn synthetic_note(len: usize) -> String {
    const WORDS: &[&str] = &[
        "patient", "history", "of", "hypertension", "aspirin", "daily", "was", "ruled", "out", "CT", "showed", "mass", "right",
        "adrenal", "liver", "fibrosis", "denies", "chest", "pain", "mg", "the", "and", "with", "on", "for", "follow-up",
    ];
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut out = String::with_capacity(len + 16);
    while out.len() < len {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(WORDS[(state % WORDS.len() as u64) as usize]);
    }
    out
}

/// A bulleted model answer with `n` items.
pub fn bulleted_answer(n: usize) -> String {
    (0..n).map(|i| format!("- item number {i}")).collect::<Vec<_>>().join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inputs_are_deterministic() {
        assert_eq!(synthetic_note(500), synthetic_note(500));
        assert!(synthetic_note(500).len() >= 500);
        assert_eq!(bulleted_answer(2), "- item number 0\n- item number 1");
    }
}
