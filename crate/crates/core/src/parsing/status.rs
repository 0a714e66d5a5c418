use crate::normalize::strip_list_marker;
use crate::types::StatusLabel;

use super::{lists::is_sentinel, unquote, Parsed};

/// One `name: status` pair. `flagged` is set when the status string was not
/// recognized and `Neither` was substituted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusPair {
    pub name: String,
    pub status: StatusLabel,
    pub flagged: bool,
    /// Status text as the model wrote it.
    pub raw_status: String,
}

/// Map a status string, including common synonyms, to a label.
pub fn parse_status_label(raw: &str) -> Option<StatusLabel> {
    let s = raw.trim().trim_end_matches(['.', ',', ';']).trim().to_lowercase();
    let s = s.trim_matches(['(', ')', '[', ']', '"', '\'']).trim();
    let lookup = |t: &str| -> Option<StatusLabel> {
        match t {
            "active" | "current" | "currently taking" | "ongoing" | "continuing" | "continued" | "taking"
            | "started" | "on" => Some(StatusLabel::Active),
            "discontinued" | "stopped" | "discontinue" | "stop" | "held" | "ceased" | "d/c" | "dc'd" | "dced"
            | "inactive" | "past" | "previous" | "former" => Some(StatusLabel::Discontinued),
            "neither" | "unknown" | "none" | "n/a" | "other" | "unclear" => Some(StatusLabel::Neither),
            _ => None,
        }
    };
    lookup(s).or_else(|| {
        let first = s.split(|c: char| c.is_whitespace() || c == '(' || c == ',').next().unwrap_or("");
        lookup(first)
    })
}

/// Parse `name: status` pairs, one per line or comma-separated on a line.
///
/// Unknown statuses keep the item as `Neither` with `flagged` set and a
/// warning. Lines without a status are preamble (if they end in `:`) or are
/// kept as flagged `Neither` items.
pub fn parse_status_pairs(text: &str) -> Parsed<Vec<StatusPair>> {
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for line in text.lines() {
        let line = strip_list_marker(line.trim()).trim();
        let line = line.trim_start_matches(['{', '[']).trim_end_matches(['}', ']']).trim();
        if line.is_empty() || is_sentinel(line) {
            continue;
        }
        if line.ends_with(':') {
            continue;
        }
        for segment in split_pairs(line) {
            let segment = segment.trim();
            if segment.is_empty() || is_sentinel(segment) {
                continue;
            }
            match segment.rsplit_once(':') {
                Some((name, status)) => {
                    let name = unquote(strip_list_marker(name)).to_string();
                    if name.is_empty() {
                        warnings.push(format!("status `{}` has no medication name", status.trim()));
                        continue;
                    }
                    let raw_status = status.trim().to_string();
                    match parse_status_label(&raw_status) {
                        Some(status) => pairs.push(StatusPair { name, status, flagged: false, raw_status }),
                        None => {
                            warnings.push(format!("unknown status `{raw_status}` for `{name}`; using neither"));
                            pairs.push(StatusPair { name, status: StatusLabel::Neither, flagged: true, raw_status });
                        }
                    }
                }
                None => {
                    let name = unquote(segment).to_string();
                    warnings.push(format!("no status given for `{name}`; using neither"));
                    pairs.push(StatusPair { name, status: StatusLabel::Neither, flagged: true, raw_status: String::new() });
                }
            }
        }
    }
    Parsed::with_warnings(pairs, warnings)
}

/// Split a line on commas/semicolons, but only where each piece is a pair.
/// A comma inside a name ("vitamin b, complex: active") stays attached.
fn split_pairs(line: &str) -> Vec<String> {
    let pieces: Vec<&str> = line.split([',', ';']).collect();
    if pieces.len() == 1 || pieces.iter().filter(|p| p.contains(':')).count() <= 1 {
        return vec![line.to_string()];
    }
    let mut out: Vec<String> = Vec::new();
    for piece in pieces {
        match out.last_mut() {
            Some(last) if !last.contains(':') => {
                last.push(',');
                last.push_str(piece);
            }
            _ => out.push(piece.to_string()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names_and_status(text: &str) -> Vec<(String, StatusLabel)> {
        parse_status_pairs(text).value.into_iter().map(|p| (p.name, p.status)).collect()
    }

    #[test]
    fn comma_separated_pairs() {
        assert_eq!(
            names_and_status("aspirin: discontinued, plavix: active"),
            vec![("aspirin".to_string(), StatusLabel::Discontinued), ("plavix".to_string(), StatusLabel::Active)]
        );
    }

    #[test]
    fn synonym_stopped() {
        assert_eq!(names_and_status("ibuprofen: stopped"), vec![("ibuprofen".to_string(), StatusLabel::Discontinued)]);
        assert_eq!(names_and_status("- Lisinopril: Current"), vec![("Lisinopril".to_string(), StatusLabel::Active)]);
    }

    #[test]
    fn empty_text() {
        assert!(parse_status_pairs("").value.is_empty());
    }

    #[test]
    fn unknown_status_is_flagged_neither() {
        let p = parse_status_pairs("metformin: maybe");
        assert_eq!(p.value.len(), 1);
        assert_eq!(p.value[0].status, StatusLabel::Neither);
        assert!(p.value[0].flagged);
        assert_eq!(p.warnings.len(), 1);
    }

    #[test]
    fn bullets_braces_and_preamble() {
        let text = "Medications:\n- aspirin: discontinued\n- plavix: active (started 2019)\n";
        assert_eq!(names_and_status(text).len(), 2);
        assert_eq!(names_and_status("{aspirin: discontinued, plavix: active}").len(), 2);
    }

    #[test]
    fn sentinel_lines_skipped() {
        assert!(parse_status_pairs("- none").value.is_empty());
    }
}
