//! Value normalization shared by extraction, merging, and evaluation.
//!
//! Matching is case-insensitive exact string equality after normalization.
//! Acronyms and synonyms are deliberately left alone.

/// Characters stripped from both ends of a value as wrapping quotes.
const QUOTE_CHARS: &[char] = &['"', '\'', '`', '\u{201C}', '\u{201D}', '\u{2018}', '\u{2019}', '\u{00AB}', '\u{00BB}'];

/// Normalize a raw model-produced value into its comparison key.
///
/// Collapses Unicode whitespace, strips list markers, wrapping quotes and
/// trailing periods, and lowercases.
pub fn normalize(raw: &str) -> String {
    let mut s = collapse_whitespace(raw);
    // Strip repeatedly so that e.g. `- "Aspirin."` reduces fully; every
    // pass either shortens the string or terminates.
    loop {
        let before = s.len();
        s = strip_list_marker(&s).to_string();
        s = s.trim_matches(QUOTE_CHARS).trim().to_string();
        s = s.trim_end_matches('.').trim_end().to_string();
        if s.len() == before {
            break;
        }
    }
    s.to_lowercase()
}

/// Collapse every run of Unicode whitespace to a single ASCII space and trim.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Strip one leading bullet (`-`, `*`, `•`) or enumeration (`1.`, `2)`) marker.
///
/// Enumerations require trailing whitespace so that values such as `96.04`
/// survive intact.
pub fn strip_list_marker(s: &str) -> &str {
    let t = s.trim_start();
    if let Some(rest) = t.strip_prefix(['-', '*', '\u{2022}', '\u{2023}', '\u{25E6}', '\u{2013}']) {
        return rest.trim_start();
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 && digits <= 3 {
        let rest = &t[digits..];
        if let Some(after) = rest.strip_prefix(['.', ')']) {
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return after.trim_start();
            }
        }
    }
    t
}

/// Lowercase a single char when its lowercase form is a single char.
///
/// Keeps a one-to-one char mapping, which offset bookkeeping relies on.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}
