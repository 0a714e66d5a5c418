use std::collections::BTreeMap;

use crate::backend::{ChatMessage, Mode, Prompt, Role};

use super::{PromptError, PromptTemplate};

pub type Bindings = BTreeMap<String, String>;

enum Piece<'a> {
    Literal(&'a str),
    Brace(char),
    Placeholder(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut lit_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Piece::Literal(&text[lit_start..i]));
                out.push(Piece::Brace('{'));
                i += 2;
                lit_start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Piece::Literal(&text[lit_start..i]));
                out.push(Piece::Brace('}'));
                i += 2;
                lit_start = i;
            }
            b'{' => {
                let rest = &text[i + 1..];
                let name_len = rest.bytes().take_while(|b| b.is_ascii_lowercase() || *b == b'_' || b.is_ascii_digit()).count();
                if name_len > 0 && rest.as_bytes().get(name_len) == Some(&b'}') {
                    out.push(Piece::Literal(&text[lit_start..i]));
                    out.push(Piece::Placeholder(&rest[..name_len]));
                    i += name_len + 2;
                    lit_start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Literal(&text[lit_start..]));
    out
}

/// Placeholder names used in `text`, in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for p in pieces(text) {
        if let Piece::Placeholder(n) = p {
            if !names.iter().any(|x| x == n) {
                names.push(n.to_string());
            }
        }
    }
    names
}

/// Substitute placeholders in one pass; bound values are never re-scanned.
pub fn render_text(template_id: &str, text: &str, bindings: &Bindings) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len() + bindings.values().map(String::len).sum::<usize>());
    for p in pieces(text) {
        match p {
            Piece::Literal(s) => out.push_str(s),
            Piece::Brace(c) => out.push(c),
            Piece::Placeholder(name) => match bindings.get(name) {
                Some(v) => out.push_str(v),
                None => {
                    return Err(PromptError::MissingPlaceholder { template: template_id.to_string(), name: name.to_string() })
                }
            },
        }
    }
    Ok(out)
}

/// Render a template for the given endpoint mode.
///
/// Chat mode yields a system message (instructions) and a user message
/// (body). Completion mode joins the two with a blank line.
pub fn render(template: &PromptTemplate, bindings: &Bindings, mode: Mode) -> Result<Prompt, PromptError> {
    let system = render_text(&template.id, &template.system, bindings)?;
    let body = render_text(&template.id, &template.body, bindings)?;
    Ok(match mode {
        Mode::Chat => {
            let mut messages = Vec::with_capacity(2);
            if !system.is_empty() {
                messages.push(ChatMessage::new(Role::System, system));
            }
            messages.push(ChatMessage::new(Role::User, body));
            Prompt::Chat(messages)
        }
        Mode::Completion if system.is_empty() => Prompt::Completion(body),
        Mode::Completion => Prompt::Completion(format!("{system}\n\n{body}")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::PromptStep;
    use crate::types::TaskKind;

    fn tmpl(system: &str, body: &str) -> PromptTemplate {
        PromptTemplate {
            id: "t".into(),
            step: PromptStep::Original,
            task: TaskKind::MedicationStatus,
            system: system.into(),
            body: body.into(),
        }
    }

    fn bind(pairs: &[(&str, &str)]) -> Bindings {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn substitutes_input() {
        let p = render(&tmpl("", "Note: {input}"), &bind(&[("input", "x")]), Mode::Completion).unwrap();
        assert_eq!(p, Prompt::Completion("Note: x".into()));
    }

    #[test]
    fn empty_demonstrations() {
        let p = render(&tmpl("", "{demonstrations}Note: {input}"), &bind(&[("demonstrations", ""), ("input", "x")]), Mode::Completion).unwrap();
        assert_eq!(p.text(), "Note: x");
    }

    #[test]
    fn unbound_placeholder_errors() {
        let err = render(&tmpl("", "List: {items}"), &Bindings::new(), Mode::Completion).unwrap_err();
        assert_eq!(err, PromptError::MissingPlaceholder { template: "t".into(), name: "items".into() });
    }

    #[test]
    fn values_are_not_rescanned_and_braces_escape() {
        let out = render_text("t", "{{literal}} {input} {not a placeholder}", &bind(&[("input", "{items}")])).unwrap();
        assert_eq!(out, "{literal} {items} {not a placeholder}");
    }

    #[test]
    fn chat_mode_splits_messages() {
        let p = render(&tmpl("Instructions", "Note: {input}"), &bind(&[("input", "x")]), Mode::Chat).unwrap();
        match p {
            Prompt::Chat(m) => {
                assert_eq!(m.len(), 2);
                assert_eq!(m[0], ChatMessage::new(Role::System, "Instructions"));
                assert_eq!(m[1], ChatMessage::new(Role::User, "Note: x"));
            }
            other => panic!("expected chat prompt, got {other:?}"),
        }
    }

    #[test]
    fn lists_placeholders() {
        assert_eq!(placeholders("{a} {b} {a} {{c}}"), vec!["a", "b"]);
    }
}
