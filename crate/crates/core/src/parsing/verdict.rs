use super::Parsed;

const KEEP_WORDS: &[&str] = &["yes", "correct", "keep", "true", "accurate", "valid"];
const REMOVE_WORDS: &[&str] = &["no", "incorrect", "remove", "false", "inaccurate", "invalid", "wrong"];
const NEGATIONS: &[&str] = &["not", "isn't", "isnt"];

/// Outcome of a prune verdict. Ambiguous answers keep the item.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Verdict {
    pub keep: bool,
    pub ambiguous: bool,
}

/// Decide keep/remove from the first affirmative or negative word.
///
/// A negation directly before an affirmative word flips it ("not correct").
pub fn parse_verdict(text: &str) -> Parsed<Verdict> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .collect();
    for (i, w) in words.iter().enumerate() {
        let negated = i > 0 && NEGATIONS.contains(&words[i - 1]);
        if KEEP_WORDS.contains(w) {
            return Parsed::new(Verdict { keep: !negated, ambiguous: false });
        }
        if REMOVE_WORDS.contains(w) {
            return Parsed::new(Verdict { keep: negated, ambiguous: false });
        }
    }
    let preview: String = text.chars().take(60).collect();
    Parsed::with_warnings(Verdict { keep: true, ambiguous: true }, vec![format!("ambiguous verdict `{preview}`; keeping item")])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keep(text: &str) -> bool {
        parse_verdict(text).value.keep
    }

    #[test]
    fn ruled_out_is_removed() {
        assert!(!keep("No \u{2014} the note says fibrosis was ruled out."));
    }

    #[test]
    fn yes_keeps() {
        let v = parse_verdict("Yes.");
        assert_eq!(v.value, Verdict { keep: true, ambiguous: false });
    }

    #[test]
    fn ambiguous_defaults_to_keep() {
        let v = parse_verdict("Possibly");
        assert_eq!(v.value, Verdict { keep: true, ambiguous: true });
        assert_eq!(v.warnings.len(), 1);
    }

    #[test]
    fn case_and_negation() {
        assert!(!keep("INCORRECT, this was never prescribed"));
        assert!(!keep("This is not correct"));
        assert!(keep("Correct: the note confirms it"));
        assert!(!keep("FALSE? no wait"));
        assert!(keep("Keep"));
    }

    #[test]
    fn empty_is_ambiguous() {
        assert!(parse_verdict("").value.ambiguous);
    }
}
