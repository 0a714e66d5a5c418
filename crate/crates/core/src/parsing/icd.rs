use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;

use super::Parsed;

// ICD-10 style: letter + two digits, optional third char and decimal part.
// ICD-9 style: 2-3 digits with an optional 1-2 digit decimal part (V/E codes
// fall under the letter form).
static CODE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:[A-Z][0-9]{2}[0-9A-Z]?(?:\.[0-9A-Z]{1,4})?|[0-9]{2,3}(?:\.[0-9]{1,2})?)\b").unwrap()
});

static FULL_CODE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^(?:[A-Z][0-9]{2}[0-9A-Z]?(?:\.[0-9A-Z]{1,4})?|[0-9]{2,3}(?:\.[0-9]{1,2})?)$").unwrap()
});

/// Whether a token has the shape of an ICD-9 or ICD-10 code.
pub fn is_icd_shape(token: &str) -> bool {
    FULL_CODE_RE.is_match(token.trim())
}

/// Every code-shaped token in order, uppercased, duplicates kept.
pub fn scan_icd_codes(text: &str) -> Vec<String> {
    CODE_RE
        .find_iter(text)
        .filter(|m| {
            // A decimal point right after the match means a longer number
            // such as `1.234` that is not a code.
            let after = &text[m.end()..];
            !(after.starts_with('.') && after[1..].starts_with(|c: char| c.is_ascii_digit()))
                && !text[..m.start()].ends_with('.')
        })
        .map(|m| m.as_str().to_uppercase())
        .collect()
}

/// Extract ICD code tokens by shape, uppercase them, and dedup in order.
pub fn parse_icd_codes(text: &str) -> Parsed<Vec<String>> {
    let mut seen = HashSet::new();
    let codes: Vec<String> = scan_icd_codes(text).into_iter().filter(|c| seen.insert(c.clone())).collect();

    let dropped = text
        .split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | '[' | ']' | '(' | ')'))
        .map(|t| t.trim_matches(['"', '\'', '.', ':']))
        .filter(|t| !t.is_empty() && !t.starts_with('-') && !is_icd_shape(t))
        .count();
    let warnings = if dropped > 0 { vec![format!("dropped {dropped} non-code token(s)")] } else { Vec::new() };
    Parsed::with_warnings(codes, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icd9_list() {
        let p = parse_icd_codes("205.0, 724.1, 96.04");
        assert_eq!(p.value, vec!["205.0", "724.1", "96.04"]);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn dedup_and_uppercase() {
        assert_eq!(parse_icd_codes("I10 and also I10").value, vec!["I10"]);
        assert_eq!(parse_icd_codes("e11.9; i10").value, vec!["E11.9", "I10"]);
    }

    #[test]
    fn no_codes() {
        let p = parse_icd_codes("no codes");
        assert!(p.value.is_empty());
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn prose_with_embedded_codes() {
        let p = parse_icd_codes("Hypertension maps to I10, and the adrenal mass to E27.8 (other adrenal disorder).");
        assert_eq!(p.value, vec!["I10", "E27.8"]);
    }

    #[test]
    fn v_codes_and_bracketed_lists() {
        assert_eq!(parse_icd_codes("[V45.81, 401.9]").value, vec!["V45.81", "401.9"]);
    }

    #[test]
    fn long_numbers_are_not_codes() {
        assert!(parse_icd_codes("2019 and 1.234 and 12345").value.is_empty());
    }

    #[test]
    fn shape_check() {
        assert!(is_icd_shape("96.04"));
        assert!(is_icd_shape("S72.001A"));
        assert!(!is_icd_shape("hypertension"));
        assert!(!is_icd_shape("1"));
    }
}
