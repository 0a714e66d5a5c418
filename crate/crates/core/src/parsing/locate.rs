//! Quote localization: exact, then case-insensitive with collapsed
//! whitespace, then best fuzzy window by edit distance.

use crate::normalize::fold_char;
use crate::types::{char_slice, EvidenceSpan, MatchKind};

/// Maximum accepted normalized edit distance for a fuzzy match.
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.2;

/// Text after case folding and whitespace collapsing, with each folded char
/// mapped back to its char offset in the original.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldedText {
    pub chars: Vec<char>,
    pub origin: Vec<usize>,
}

impl FoldedText {
    /// Original `[start, end)` char range covered by folded `[from, to)`.
    pub fn original_range(&self, from: usize, to: usize) -> (usize, usize) {
        debug_assert!(from < to && to <= self.chars.len());
        (self.origin[from], self.origin[to - 1] + 1)
    }
}

/// Fold case per char and collapse whitespace runs to one space. Leading and
/// trailing whitespace is kept (as a single space) so that offsets map back.
pub fn fold_for_match(text: &str) -> FoldedText {
    let mut chars = Vec::with_capacity(text.len());
    let mut origin = Vec::with_capacity(text.len());
    let mut in_space = false;
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            if !in_space {
                chars.push(' ');
                origin.push(i);
            }
            in_space = true;
        } else {
            chars.push(fold_char(c));
            origin.push(i);
            in_space = false;
        }
    }
    FoldedText { chars, origin }
}

/// Levenshtein distance over chars.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=a.len()).collect();
    let mut cur = vec![0; a.len() + 1];
    for (j, cb) in b.iter().enumerate() {
        cur[0] = j + 1;
        for (i, ca) in a.iter().enumerate() {
            let sub = prev[i] + usize::from(ca != cb);
            cur[i + 1] = sub.min(prev[i + 1] + 1).min(cur[i] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[a.len()]
}

/// Edit distance between folded `quote` and folded `window`, divided by the
/// folded quote length.
pub fn normalized_distance(quote: &str, window: &str) -> f64 {
    let q = fold_for_match(quote.trim()).chars;
    let w = fold_for_match(window).chars;
    if q.is_empty() {
        return if w.is_empty() { 0.0 } else { 1.0 };
    }
    edit_distance(&q, &w) as f64 / q.len() as f64
}

/// [`locate_quote_with`] at the default fuzzy threshold.
pub fn locate_quote(doc_text: &str, quote: &str) -> EvidenceSpan {
    locate_quote_with(doc_text, quote, DEFAULT_FUZZY_THRESHOLD)
}

/// Localize `quote` in `doc_text`. Leftmost occurrence wins ties.
pub fn locate_quote_with(doc_text: &str, quote: &str, fuzzy_threshold: f64) -> EvidenceSpan {
    let quote = quote.trim();
    if quote.is_empty() {
        return EvidenceSpan::not_found(quote);
    }
    if let Some(byte) = doc_text.find(quote) {
        let start = doc_text[..byte].chars().count();
        let end = start + quote.chars().count();
        return span(quote, start, end, MatchKind::Exact, 0.0);
    }

    let doc = fold_for_match(doc_text);
    let q = fold_for_match(quote).chars;
    if q.len() <= doc.chars.len() {
        if let Some(pos) = doc.chars.windows(q.len()).position(|w| w == q.as_slice()) {
            let (start, end) = doc.original_range(pos, pos + q.len());
            return span(quote, start, end, MatchKind::CaseInsensitive, 0.0);
        }
    }

    if let Some(best) = best_fuzzy_window(&q, &doc.chars) {
        let ratio = best.distance as f64 / q.len() as f64;
        if ratio <= fuzzy_threshold && best.end > best.start {
            let (start, end) = doc.original_range(best.start, best.end);
            return span(quote, start, end, MatchKind::Fuzzy, ratio);
        }
    }
    EvidenceSpan::not_found(quote)
}

fn span(quote: &str, start: usize, end: usize, match_kind: MatchKind, distance: f64) -> EvidenceSpan {
    EvidenceSpan { quote: quote.to_string(), start, end, match_kind, distance }
}

/// Best window in folded-char coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub distance: usize,
    pub start: usize,
    pub end: usize,
}

/// Minimum edit distance between `quote` and any substring of `doc`, ties
/// broken by smallest start, then smallest end.
///
/// Semi-global alignment: the first row is free so a window may start
/// anywhere. Alongside each distance cell we carry the smallest start offset
/// among the optimal alignments reaching it.
pub fn best_fuzzy_window(quote: &[char], doc: &[char]) -> Option<Window> {
    let m = quote.len();
    if m == 0 {
        return None;
    }
    let mut dist: Vec<usize> = (0..=m).collect();
    let mut start: Vec<usize> = vec![0; m + 1];
    let mut next_dist = vec![0usize; m + 1];
    let mut next_start = vec![0usize; m + 1];

    let mut best = Window { distance: m, start: 0, end: 0 };
    for (j, &dc) in doc.iter().enumerate() {
        let col = j + 1;
        next_dist[0] = 0;
        next_start[0] = col;
        for i in 1..=m {
            let diag = dist[i - 1] + usize::from(quote[i - 1] != dc);
            let up = next_dist[i - 1] + 1;
            let left = dist[i] + 1;
            let d = diag.min(up).min(left);
            let mut s = usize::MAX;
            if diag == d {
                s = s.min(start[i - 1]);
            }
            if up == d {
                s = s.min(next_start[i - 1]);
            }
            if left == d {
                s = s.min(start[i]);
            }
            next_dist[i] = d;
            next_start[i] = s;
        }
        std::mem::swap(&mut dist, &mut next_dist);
        std::mem::swap(&mut start, &mut next_start);
        let cand = Window { distance: dist[m], start: start[m], end: col };
        if (cand.distance, cand.start, cand.end) < (best.distance, best.start, best.end) {
            best = cand;
        }
    }
    Some(best)
}

/// Re-check the substring invariant a span claims.
pub fn verify_span(doc_text: &str, span: &EvidenceSpan, fuzzy_threshold: f64) -> bool {
    let total = doc_text.chars().count();
    match span.match_kind {
        MatchKind::NotFound => span.start == 0 && span.end == 0,
        _ if span.start >= span.end || span.end > total => false,
        MatchKind::Exact => char_slice(doc_text, span.start, span.end) == span.quote.trim(),
        MatchKind::CaseInsensitive => {
            fold_for_match(char_slice(doc_text, span.start, span.end)).chars == fold_for_match(span.quote.trim()).chars
        }
        MatchKind::Fuzzy => normalized_distance(&span.quote, char_slice(doc_text, span.start, span.end)) <= fuzzy_threshold + 1e-12,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const NOTE: &str = "Pt with history of hypertension. CT showed a Right Adrenal   Mass. Liver fibrosis was ruled out.";

    #[test]
    fn exact_substring() {
        let s = locate_quote(NOTE, "history of hypertension");
        assert_eq!(s.match_kind, MatchKind::Exact);
        assert_eq!(s.slice(NOTE), "history of hypertension");
        assert!(verify_span(NOTE, &s, DEFAULT_FUZZY_THRESHOLD));
    }

    #[test]
    fn case_and_whitespace_insensitive() {
        let s = locate_quote(NOTE, "right adrenal mass");
        assert_eq!(s.match_kind, MatchKind::CaseInsensitive);
        assert_eq!(s.slice(NOTE), "Right Adrenal   Mass");
        assert!(verify_span(NOTE, &s, DEFAULT_FUZZY_THRESHOLD));
    }

    #[test]
    fn fuzzy_inserted_word() {
        let doc = "one two three four five six seven eight nine ten eleven twelve thirteen fourteen fifteen sixteen seventeen eighteen nineteen twenty";
        let quote = "five six seven eight extra nine ten eleven twelve thirteen fourteen";
        let s = locate_quote(doc, quote);
        assert_eq!(s.match_kind, MatchKind::Fuzzy);
        assert_eq!(s.slice(doc), "five six seven eight nine ten eleven twelve thirteen fourteen");
        assert!(verify_span(doc, &s, DEFAULT_FUZZY_THRESHOLD));
    }

    #[test]
    fn fabricated_quote_not_found() {
        let s = locate_quote(NOTE, "patient denies chest pain entirely");
        assert_eq!(s.match_kind, MatchKind::NotFound);
        assert_eq!((s.start, s.end), (0, 0));
    }

    #[test]
    fn leftmost_occurrence_wins() {
        let s = locate_quote("abc xyz abc", "abc");
        assert_eq!((s.start, s.end), (0, 3));
        let s = locate_quote("ABC xyz abc", "abc x");
        assert_eq!(s.match_kind, MatchKind::CaseInsensitive);
        assert_eq!((s.start, s.end), (0, 5));
    }

    #[test]
    fn multibyte_offsets_are_chars() {
        let doc = "caf\u{e9} \u{2014} na\u{ef}ve patient";
        let s = locate_quote(doc, "na\u{ef}ve");
        assert_eq!((s.start, s.end), (7, 12));
        assert_eq!(s.slice(doc), "na\u{ef}ve");
    }

    #[test]
    fn empty_quote_not_found() {
        assert_eq!(locate_quote(NOTE, "  ").match_kind, MatchKind::NotFound);
        assert_eq!(locate_quote("", "x").match_kind, MatchKind::NotFound);
    }

    #[test]
    fn dp_window_matches_direct_enumeration() {
        let doc: Vec<char> = "xxabcdyyabxdzz".chars().collect();
        let q: Vec<char> = "abcd".chars().collect();
        let w = best_fuzzy_window(&q, &doc).unwrap();
        let mut best = (usize::MAX, 0, 0);
        for s in 0..=doc.len() {
            for e in s..=doc.len() {
                best = best.min((edit_distance(&q, &doc[s..e]), s, e));
            }
        }
        assert_eq!((w.distance, w.start, w.end), best);
    }

    #[test]
    fn edit_distance_basics() {
        let c = |s: &str| s.chars().collect::<Vec<_>>();
        assert_eq!(edit_distance(&c("kitten"), &c("sitting")), 3);
        assert_eq!(edit_distance(&c(""), &c("abc")), 3);
        assert_eq!(edit_distance(&c("abc"), &c("")), 3);
    }
}
