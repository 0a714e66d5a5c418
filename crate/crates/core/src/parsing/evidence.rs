use std::collections::BTreeMap;

use crate::normalize::{normalize, strip_list_marker};

use super::{unquote, Parsed};

/// Parse `item: "quote"` lines and align them to the expected item keys.
///
/// Keys in the result are the normalized expected values. The item part of a
/// line is matched by normalized equality first, then by containment
/// (longest expected key wins). The first quote for an item wins.
pub fn parse_evidence<S: AsRef<str>>(text: &str, expected_items: &[S]) -> Parsed<BTreeMap<String, String>> {
    let expected: Vec<String> = expected_items.iter().map(|s| normalize(s.as_ref())).filter(|s| !s.is_empty()).collect();
    let mut found = BTreeMap::new();
    let mut warnings = Vec::new();

    for line in text.lines() {
        let line = strip_list_marker(line.trim()).trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, quote)) = split_line(line, &expected) else {
            continue;
        };
        let quote = unquote(quote).to_string();
        if quote.is_empty() {
            warnings.push(format!("empty quote for `{key}`"));
            continue;
        }
        found.entry(key).or_insert(quote);
    }

    for e in &expected {
        if !found.contains_key(e) {
            warnings.push(format!("no evidence returned for `{e}`"));
        }
    }
    Parsed::with_warnings(found, warnings)
}

/// Find the colon that separates a recognized item from its quote.
fn split_line<'a>(line: &'a str, expected: &[String]) -> Option<(String, &'a str)> {
    let colons: Vec<usize> = line.match_indices(':').map(|(i, _)| i).collect();
    // Exact normalized match on the text before some colon.
    for &i in &colons {
        let head = strip_status_suffix(&normalize(&line[..i]));
        if let Some(e) = expected.iter().find(|e| **e == head) {
            return Some((e.clone(), &line[i + 1..]));
        }
    }
    // Containment: `Aspirin (discontinued): "..."`.
    let &first = colons.first()?;
    let head = normalize(&line[..first]);
    expected
        .iter()
        .filter(|e| head.contains(e.as_str()))
        .max_by_key(|e| e.len())
        .map(|e| (e.clone(), &line[first + 1..]))
}

fn strip_status_suffix(head: &str) -> String {
    // "aspirin (active)" -> "aspirin"
    match head.rfind(" (") {
        Some(i) if head.ends_with(')') => head[..i].trim().to_string(),
        _ => head.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_with_quoted_evidence() {
        let p = parse_evidence("hypertension: \"history of hypertension\"", &["hypertension"]);
        assert_eq!(p.value.get("hypertension").map(String::as_str), Some("history of hypertension"));
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn missing_item_is_absent_with_warning() {
        let p = parse_evidence("- Hypertension: \"history of hypertension\"", &["hypertension", "liver fibrosis"]);
        assert_eq!(p.value.len(), 1);
        assert!(!p.value.contains_key("liver fibrosis"));
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn smart_quotes_unwrapped() {
        let p = parse_evidence("Liver fibrosis: \u{201C}fibrosis was ruled out\u{201D}", &["liver fibrosis"]);
        assert_eq!(p.value["liver fibrosis"], "fibrosis was ruled out");
    }

    #[test]
    fn unquoted_and_status_annotated_heads() {
        let p = parse_evidence("aspirin (discontinued): stopped aspirin last week\nPlavix: continue plavix", &["aspirin", "plavix"]);
        assert_eq!(p.value["aspirin"], "stopped aspirin last week");
        assert_eq!(p.value["plavix"], "continue plavix");
    }

    #[test]
    fn colon_inside_quote_kept() {
        let p = parse_evidence("bp: \"BP: 150/90\"", &["bp"]);
        assert_eq!(p.value["bp"], "BP: 150/90");
    }

    #[test]
    fn unrelated_lines_ignored() {
        let p = parse_evidence("Here is the evidence:\nnothing useful", &["x"]);
        assert!(p.value.is_empty());
    }
}
