//! Lenient parsers from raw model text to structured results, plus the
//! quote-to-offset span locator.
//!
//! None of these functions fail on arbitrary input. Anything that could not
//! be interpreted is reported as a warning next to the parsed value.

mod evidence;
mod icd;
mod lists;
mod locate;
mod status;
mod verdict;

pub use evidence::parse_evidence;
pub use icd::{is_icd_shape, parse_icd_codes, scan_icd_codes};
pub use lists::{is_sentinel, parse_bulleted_list, render_as_bullets};
pub use locate::{
    best_fuzzy_window, edit_distance, fold_for_match, locate_quote, locate_quote_with, normalized_distance,
    verify_span, FoldedText, Window, DEFAULT_FUZZY_THRESHOLD,
};
pub use status::{parse_status_label, parse_status_pairs, StatusPair};
pub use verdict::{parse_verdict, Verdict};

/// A parsed value with the warnings raised while producing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Parsed<T> {
    pub fn new(value: T) -> Self {
        Parsed { value, warnings: Vec::new() }
    }

    pub fn with_warnings(value: T, warnings: Vec<String>) -> Self {
        Parsed { value, warnings }
    }
}

/// Strip one layer of matching wrapping quotes (straight or typographic).
pub(crate) fn unquote(s: &str) -> &str {
    const PAIRS: &[(char, char)] = &[
        ('"', '"'),
        ('\'', '\''),
        ('\u{201C}', '\u{201D}'),
        ('\u{2018}', '\u{2019}'),
        ('\u{00AB}', '\u{00BB}'),
        ('`', '`'),
    ];
    let t = s.trim();
    for &(open, close) in PAIRS {
        if let Some(inner) = t.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            return inner.trim();
        }
    }
    // Unbalanced leading quote, common when the model truncates.
    t.trim_start_matches(['"', '\u{201C}']).trim_end_matches(['"', '\u{201D}']).trim()
}
