// SPDX-License-Identifier: MIT OR Apache-2.0

//! Prompt templates.
//!
//! A template body may use `{input}`, `{feedback_coarse}`, `{feedback_fine}`
//! and `{output}`, and must end with `:{output}` so the model answers right
//! after the colon. Text wrapped in `[[ ... ]]` is a scaffold around a
//! feedback slot and is dropped entirely when that feedback is absent, so a
//! prompt with feedback differs from its zero-shot form by one contiguous span.

use super::dataset::{DatasetRecord, FeedbackKind};
use crate::error::{Error, Result};

pub const DEFAULT_TEMPLATE: &str =
    "[[Policy: {feedback_coarse} ]]Post: {input} [[Thinking: {feedback_fine} ]]Answer:{output}";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Input,
    FeedbackCoarse,
    FeedbackFine,
    Output,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
    Optional(Vec<Segment>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    segments: Vec<Segment>,
}

/// Which annotator's feedback, and of which kind, to render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackSelection<'a> {
    pub annotator_id: &'a str,
    pub kind: FeedbackKind,
}

fn parse_segments(body: &str) -> Result<Vec<Segment>> {
    let err = |msg: String| Error::Template(msg);
    let mut top: Vec<Segment> = Vec::new();
    let mut optional: Option<Vec<Segment>> = None;
    let mut text = String::new();
    let mut rest = body;

    fn flush(text: &mut String, into: &mut Vec<Segment>) {
        if !text.is_empty() {
            into.push(Segment::Text(std::mem::take(text)));
        }
    }

    while let Some(c) = rest.chars().next() {
        if let Some(after) = rest.strip_prefix("[[") {
            if optional.is_some() {
                return Err(err("nested [[ in template".into()));
            }
            flush(&mut text, &mut top);
            optional = Some(Vec::new());
            rest = after;
        } else if let Some(after) = rest.strip_prefix("]]") {
            let Some(mut inner) = optional.take() else {
                return Err(err("unmatched ]] in template".into()));
            };
            flush(&mut text, &mut inner);
            let has_feedback = inner
                .iter()
                .any(|s| matches!(s, Segment::Slot(Slot::FeedbackCoarse | Slot::FeedbackFine)));
            if !has_feedback {
                return Err(err(
                    "a [[ ]] section must contain a feedback placeholder".into()
                ));
            }
            top.push(Segment::Optional(inner));
            rest = after;
        } else if c == '{' {
            let close = rest
                .find('}')
                .ok_or_else(|| err("unterminated placeholder".into()))?;
            let slot = match &rest[1..close] {
                "input" => Slot::Input,
                "feedback_coarse" => Slot::FeedbackCoarse,
                "feedback_fine" => Slot::FeedbackFine,
                "output" => Slot::Output,
                other => return Err(err(format!("unknown placeholder {{{other}}}"))),
            };
            if slot == Slot::Output && optional.is_some() {
                return Err(err("{output} cannot sit inside [[ ]]".into()));
            }
            let target = optional.as_mut().unwrap_or(&mut top);
            flush(&mut text, target);
            target.push(Segment::Slot(slot));
            rest = &rest[close + 1..];
        } else {
            text.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    if optional.is_some() {
        return Err(err("unterminated [[ in template".into()));
    }
    flush(&mut text, &mut top);

    let ends_right = matches!(top.last(), Some(Segment::Slot(Slot::Output)))
        && matches!(top.iter().rev().nth(1), Some(Segment::Text(t)) if t.ends_with(':'));
    if !ends_right {
        return Err(err(
            "template must end with ':{output}' and no space before it".into(),
        ));
    }
    let outputs = top
        .iter()
        .filter(|s| matches!(s, Segment::Slot(Slot::Output)))
        .count();
    if outputs != 1 {
        return Err(err("template must contain {output} exactly once".into()));
    }
    Ok(top)
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let segments = parse_segments(&body)?;
        Ok(Self {
            name: name.into(),
            body,
            segments,
        })
    }

    pub fn default_template() -> Self {
        Self::new("default", DEFAULT_TEMPLATE).expect("built-in template parses")
    }

    /// Renders one record. `output` fills the answer slot (empty for a query).
    pub fn render_one(
        &self,
        record: &DatasetRecord,
        selection: Option<FeedbackSelection<'_>>,
        output: &str,
    ) -> Result<String> {
        let (coarse, fine) = match selection {
            None => ("", ""),
            Some(sel) => {
                let text = record
                    .feedback_text(sel.annotator_id, sel.kind)
                    .ok_or_else(|| {
                        Error::Validation(format!(
                            "record {} has no {} feedback from {}",
                            record.record_id, sel.kind, sel.annotator_id
                        ))
                    })?;
                match sel.kind {
                    FeedbackKind::Coarse => (text, ""),
                    FeedbackKind::Granular => ("", text),
                }
            }
        };
        let fill = |slot: Slot| match slot {
            Slot::Input => record.input_text.as_str(),
            Slot::FeedbackCoarse => coarse,
            Slot::FeedbackFine => fine,
            Slot::Output => output,
        };
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Slot(s) => out.push_str(fill(*s)),
                Segment::Optional(inner) => {
                    let present = inner.iter().all(|s| match s {
                        Segment::Slot(slot @ (Slot::FeedbackCoarse | Slot::FeedbackFine)) => {
                            !fill(*slot).is_empty()
                        }
                        _ => true,
                    });
                    if present {
                        for s in inner {
                            match s {
                                Segment::Text(t) => out.push_str(t),
                                Segment::Slot(slot) => out.push_str(fill(*slot)),
                                Segment::Optional(_) => unreachable!("nesting rejected at parse"),
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Few-shot examples (rendered with their gold answers, no feedback), one per
/// line, followed by the query prompt ending in the answer colon.
pub fn render_prompt(
    template: &PromptTemplate,
    record: &DatasetRecord,
    selection: Option<FeedbackSelection<'_>>,
    few_shot_examples: &[&DatasetRecord],
) -> Result<String> {
    let mut out = String::new();
    for ex in few_shot_examples {
        let answer = &ex.answer_options[ex.gold_index()].1;
        out.push_str(&template.render_one(ex, None, answer)?);
        out.push('\n');
    }
    out.push_str(&template.render_one(record, selection, "")?);
    Ok(out)
}
