//! Inline `[digits LABEL]` gesture tags.

use serde::{Deserialize, Serialize};

use crate::index::SemanticIndex;
use crate::{Error, Result};

/// A tag and the index of the word right before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub position: usize,
    pub identifier: String,
    pub label: String,
}

fn parse_tag(body: &str, offset: usize) -> Result<(String, String)> {
    let body = body.trim();
    let (id, label) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
    let label = label.split_whitespace().collect::<Vec<_>>().join(" ");
    if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
        return Err(Error::Syntax {
            offset,
            msg: format!("tag {body:?} does not start with a digit identifier"),
        });
    }
    if label.is_empty() {
        return Err(Error::Syntax {
            offset,
            msg: format!("tag {body:?} has no label"),
        });
    }
    Ok((id.to_string(), label))
}

/// Tags in document order. A tag attaches to the word before it, or to
/// word 0 when it precedes every word.
pub fn parse_annotated_text(text: &str) -> Result<Vec<Tag>> {
    let mut tags = Vec::new();
    let mut words = 0usize;
    let mut in_word = false;
    let mut chars = text.char_indices();
    while let Some((i, c)) = chars.next() {
        if c == '[' {
            in_word = false;
            let rest = &text[i + 1..];
            let close = rest.find(']').ok_or_else(|| Error::Syntax {
                offset: i,
                msg: "unclosed '['".into(),
            })?;
            let inner = &rest[..close];
            if let Some(j) = inner.find('[') {
                return Err(Error::Syntax {
                    offset: i + 1 + j,
                    msg: "nested '['".into(),
                });
            }
            let (identifier, label) = parse_tag(inner, i)?;
            tags.push(Tag {
                position: words.max(1) - 1,
                identifier,
                label,
            });
            let end = i + 1 + close;
            while chars.as_str().len() > text.len() - end - 1 {
                chars.next();
            }
        } else if c == ']' {
            return Err(Error::Syntax {
                offset: i,
                msg: "unmatched ']'".into(),
            });
        } else if c.is_whitespace() {
            in_word = false;
        } else if !in_word {
            in_word = true;
            words += 1;
        }
    }
    Ok(tags)
}

/// Words joined by spaces with each tag placed after its word.
pub fn render_annotated(words: &[String], tags: &[Tag]) -> String {
    let mut out = String::new();
    let push = |s: &str, out: &mut String| {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(s);
    };
    if words.is_empty() {
        for t in tags {
            push(&format!("[{} {}]", t.identifier, t.label), &mut out);
        }
        return out;
    }
    for (i, w) in words.iter().enumerate() {
        push(w, &mut out);
        for t in tags.iter().filter(|t| t.position == i) {
            push(&format!("[{} {}]", t.identifier, t.label), &mut out);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Baseline,
    Llm,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    /// Trigger word index.
    pub word: usize,
    pub identifier: String,
    pub label: String,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Hallucination {
    UnknownIdentifier,
    UnknownLabel,
    /// Both exist, but name different records.
    Mismatch,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Indices into the validated list.
    pub valid: Vec<usize>,
    pub invalid: Vec<(usize, Hallucination)>,
}

impl ValidationReport {
    pub fn total(&self) -> usize {
        self.valid.len() + self.invalid.len()
    }

    /// Valid share; 1 for an empty list.
    pub fn ratio(&self) -> f64 {
        if self.total() == 0 {
            1.0
        } else {
            self.valid.len() as f64 / self.total() as f64
        }
    }
}

pub fn check_pair(identifier: &str, label: &str, index: &SemanticIndex) -> Option<Hallucination> {
    let by_id = index.records.iter().position(|r| r.identifier == identifier);
    let by_label = index
        .records
        .iter()
        .position(|r| r.label.eq_ignore_ascii_case(label.trim()));
    match (by_id, by_label) {
        (None, _) => Some(Hallucination::UnknownIdentifier),
        (Some(_), None) => Some(Hallucination::UnknownLabel),
        (Some(a), Some(b)) if a != b => Some(Hallucination::Mismatch),
        _ => None,
    }
}

pub fn validate_annotations(annotations: &[Annotation], index: &SemanticIndex) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (i, a) in annotations.iter().enumerate() {
        match check_pair(&a.identifier, &a.label, index) {
            None => report.valid.push(i),
            Some(h) => report.invalid.push((i, h)),
        }
    }
    report
}
