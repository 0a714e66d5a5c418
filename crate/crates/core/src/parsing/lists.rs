use crate::normalize::{normalize, strip_list_marker};

use super::Parsed;

const SENTINELS: &[&str] = &[
    "none",
    "n/a",
    "na",
    "nil",
    "nothing",
    "none found",
    "none missed",
    "not applicable",
    "no medications",
    "no medications found",
    "no diagnoses",
    "no diagnoses found",
    "no clinical trial arms",
    "no arms",
    "no missed items",
    "no new items",
    "no omissions",
    "no additional items",
    "no codes",
];

/// Whether a line is an "empty answer" marker such as `None` or `N/A`.
pub fn is_sentinel(line: &str) -> bool {
    let n = normalize(line);
    SENTINELS.contains(&n.as_str())
}

/// Whether the line starts with a bullet or enumeration marker.
fn bullet_body(line: &str) -> Option<&str> {
    let stripped = strip_list_marker(line);
    (stripped.len() != line.trim_start().len()).then_some(stripped)
}

/// Split a model answer into raw list items.
///
/// Lines starting with `-`, `*`, `•` or an `N.` / `N)` enumeration are items;
/// prose before the first bullet is dropped. When no line carries a marker,
/// each non-empty line is an item (a single `[a, b, c]` line is split on
/// commas). Sentinel lines such as `None` yield nothing.
pub fn parse_bulleted_list(text: &str) -> Parsed<Vec<String>> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let bullets: Vec<&str> = lines.iter().filter_map(|l| bullet_body(l)).collect();
    let mut warnings = Vec::new();

    let candidates: Vec<String> = if !bullets.is_empty() {
        bullets.iter().map(|b| b.trim().to_string()).collect()
    } else if lines.len() == 1 && lines[0].starts_with('[') && lines[0].ends_with(']') {
        let inner = &lines[0][1..lines[0].len() - 1];
        inner.split(',').map(|s| s.trim().to_string()).collect()
    } else {
        lines.iter().filter(|l| !l.ends_with(':')).map(|l| l.to_string()).collect()
    };

    let items: Vec<String> = candidates.into_iter().filter(|c| !c.is_empty() && !is_sentinel(c)).collect();
    if items.is_empty() && !lines.is_empty() && !lines.iter().any(|l| is_sentinel(l)) {
        warnings.push(format!("no list items found in response of {} line(s)", lines.len()));
    }
    Parsed::with_warnings(items, warnings)
}

/// Render items in the bulleted format the parser reads.
pub fn render_as_bullets<S: AsRef<str>>(items: &[S]) -> String {
    items.iter().map(|i| format!("- {}", i.as_ref())).collect::<Vec<_>>().join("\n")
}
