// SPDX-License-Identifier: MIT OR Apache-2.0

//! Line-delimited dataset records.
//!
//! One record per line, five `|`-separated fields:
//!
//! ```text
//! record_id | input_text | options | feedback | gold
//! ```
//!
//! * options: `label:surface;label:surface;...`
//! * feedback: `annotator:kind:text;...` with kind `coarse` or `granular`, or empty
//! * gold: `label=k` or `dist=p1,p2,...` (one probability per option)
//!
//! A backslash escapes `|`, `;`, `:` and itself inside any field; `\n`
//! encodes a newline. Blank lines are skipped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Distribution;

/// Sum tolerance accepted for gold distributions before renormalization.
pub const GOLD_TOLERANCE: f64 = 1e-6;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    Coarse,
    Granular,
}

impl FeedbackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Coarse => "coarse",
            Self::Granular => "granular",
        }
    }
}

impl std::str::FromStr for FeedbackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Self::Coarse),
            "granular" => Ok(Self::Granular),
            other => Err(Error::invalid(format!("unknown feedback kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for FeedbackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feedback {
    pub annotator_id: String,
    pub kind: FeedbackKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GoldTarget {
    Label(usize),
    Distribution(Distribution),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub record_id: String,
    pub input_text: String,
    pub answer_options: Vec<(usize, String)>,
    pub feedback: Vec<Feedback>,
    pub gold: GoldTarget,
}

impl DatasetRecord {
    pub fn validate(&self) -> Result<()> {
        if self.record_id.is_empty() {
            return Err(Error::Validation("empty record_id".into()));
        }
        if self.answer_options.is_empty() {
            return Err(Error::Validation(format!(
                "record {} has no answer options",
                self.record_id
            )));
        }
        for (i, (label, _)) in self.answer_options.iter().enumerate() {
            if self.answer_options[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::Validation(format!(
                    "record {} repeats option label {label}",
                    self.record_id
                )));
            }
        }
        match &self.gold {
            GoldTarget::Label(l) if self.option_index(*l).is_none() => Err(Error::Validation(
                format!("record {} gold label {l} is not an option", self.record_id),
            )),
            GoldTarget::Distribution(d) if d.len() != self.answer_options.len() => {
                Err(Error::Validation(format!(
                    "record {} gold has {} entries for {} options",
                    self.record_id,
                    d.len(),
                    self.answer_options.len()
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn option_index(&self, label: usize) -> Option<usize> {
        self.answer_options.iter().position(|(l, _)| *l == label)
    }

    /// Feedback text from `annotator` of the given kind, if any.
    pub fn feedback_text(&self, annotator: &str, kind: FeedbackKind) -> Option<&str> {
        self.feedback
            .iter()
            .find(|f| f.annotator_id == annotator && f.kind == kind)
            .map(|f| f.text.as_str())
    }

    /// Index of the gold answer (majority option for distributional gold).
    pub fn gold_index(&self) -> usize {
        match &self.gold {
            GoldTarget::Label(l) => self.option_index(*l).expect("validated record"),
            GoldTarget::Distribution(d) => crate::numerics::argmax_index(d),
        }
    }

    pub fn to_line(&self) -> String {
        let options: Vec<String> = self
            .answer_options
            .iter()
            .map(|(l, s)| format!("{l}:{}", escape(s)))
            .collect();
        let feedback: Vec<String> = self
            .feedback
            .iter()
            .map(|f| format!("{}:{}:{}", escape(&f.annotator_id), f.kind, escape(&f.text)))
            .collect();
        let gold = match &self.gold {
            GoldTarget::Label(l) => format!("label={l}"),
            GoldTarget::Distribution(d) => {
                let ps: Vec<String> = d.probs().iter().map(|p| format!("{p:?}")).collect();
                format!("dist={}", ps.join(","))
            }
        };
        format!(
            "{}|{}|{}|{}|{}",
            escape(&self.record_id),
            escape(&self.input_text),
            options.join(";"),
            feedback.join(";"),
            gold
        )
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' | '|' | ';' | ':' => {
                out.push('\\');
                out.push(c);
            }
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

/// Splits on unescaped `sep`, leaving escape sequences in place.
fn split_escaped(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == sep {
            parts.push(&s[start..i]);
            start = i + c.len_utf8();
        }
    }
    parts.push(&s[start..]);
    parts
}

fn unescape(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some(e @ ('\\' | '|' | ';' | ':')) => out.push(e),
            Some(e) => return Err(format!("unknown escape \\{e}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

fn parse_line(line: &str) -> std::result::Result<DatasetRecord, String> {
    let fields = split_escaped(line, '|');
    let [id, input, options, feedback, gold] = fields[..] else {
        return Err(format!("expected 5 fields, found {}", fields.len()));
    };

    let mut answer_options = Vec::new();
    for opt in split_escaped(options, ';') {
        let parts = split_escaped(opt, ':');
        let [label, surface] = parts[..] else {
            return Err(format!("option {opt:?} is not label:surface"));
        };
        let label = label
            .trim()
            .parse()
            .map_err(|_| format!("bad option label {label:?}"))?;
        answer_options.push((label, unescape(surface)?));
    }

    let mut fb = Vec::new();
    if !feedback.is_empty() {
        for item in split_escaped(feedback, ';') {
            let parts = split_escaped(item, ':');
            let [who, kind, text] = parts[..] else {
                return Err(format!("feedback {item:?} is not annotator:kind:text"));
            };
            fb.push(Feedback {
                annotator_id: unescape(who)?,
                kind: kind.parse().map_err(|e: Error| e.to_string())?,
                text: unescape(text)?,
            });
        }
    }

    let gold = if let Some(l) = gold.strip_prefix("label=") {
        GoldTarget::Label(
            l.trim()
                .parse()
                .map_err(|_| format!("bad gold label {l:?}"))?,
        )
    } else if let Some(d) = gold.strip_prefix("dist=") {
        let probs = d
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad probability {p:?}"))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        GoldTarget::Distribution(
            Distribution::renormalized(probs, GOLD_TOLERANCE).map_err(|e| e.to_string())?,
        )
    } else {
        return Err(format!("gold {gold:?} is neither label=k nor dist=..."));
    };

    Ok(DatasetRecord {
        record_id: unescape(id)?,
        input_text: unescape(input)?,
        answer_options,
        feedback: fb,
        gold,
    })
}

pub fn parse_dataset(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut records: Vec<DatasetRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_line(line).map_err(|msg| Error::Parse { line: line_no, msg })?;
        rec.validate().map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if !seen.insert(rec.record_id.clone()) {
            return Err(Error::Validation(format!(
                "duplicate record_id {:?} on line {line_no}",
                rec.record_id
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn dataset_to_text(records: &[DatasetRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    std::fs::write(path, dataset_to_text(records)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "\
r1|a post\\: with \\| pipe|0:no;1:yes;2:unsure|strict:coarse:be strict;strict:granular:rude\\; very|label=1
r2|second|0:no;1:yes||dist=0.2,0.8
r3|third\\nline|0:no;1:yes;2:unsure|a\\:b:granular:x|dist=0.25,0.25,0.5
";

    #[test]
    fn empty_file_is_empty() {
        assert!(parse_dataset("").unwrap().is_empty());
        assert!(parse_dataset("\n  \n").unwrap().is_empty());
    }

    #[test]
    fn fixture_round_trips() {
        let recs = parse_dataset(FIXTURE).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].input_text, "a post: with | pipe");
        assert_eq!(
            recs[0].feedback_text("strict", FeedbackKind::Granular),
            Some("rude; very")
        );
        assert_eq!(recs[0].gold, GoldTarget::Label(1));
        assert!(recs[1].feedback.is_empty());
        assert_eq!(recs[2].input_text, "third\nline");
        assert_eq!(recs[2].feedback[0].annotator_id, "a:b");
        assert_eq!(dataset_to_text(&recs), FIXTURE);
        assert_eq!(parse_dataset(&dataset_to_text(&recs)).unwrap(), recs);
    }

    #[test]
    fn near_unit_gold_is_renormalized() {
        let line = "r|x|0:a;1:b;2:c;3:d;4:e||dist=0.2,0.2,0.2,0.2,0.199999\n";
        let recs = parse_dataset(line).unwrap();
        let GoldTarget::Distribution(d) = &recs[0].gold else {
            panic!()
        };
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let bad = "r|x|0:a;1:b;2:c;3:d;4:e||dist=0.2,0.2,0.2,0.2,0.19999\n";
        assert!(matches!(
            parse_dataset(bad),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn errors_name_the_line() {
        let text = "r1|x|0:a||label=0\n\nr2|x|0:a|label=0\n";
        match parse_dataset(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        for bad in [
            "r|x|0:a|z:weird:t|label=0",
            "r|x|0:a||label=5",
            "r|x|0:a;0:b||label=0",
            "r|x|0:a||dist=0.5,0.5",
            "r|x\\q|0:a||label=0",
            "r|x|a||label=0",
        ] {
            assert!(
                matches!(parse_dataset(bad), Err(Error::Parse { line: 1, .. })),
                "{bad}"
            );
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "r|x|0:a||label=0\nr|y|0:a||label=0\n";
        assert!(matches!(parse_dataset(text), Err(Error::Validation(_))));
    }

    #[test]
    fn gold_index() {
        let recs = parse_dataset(FIXTURE).unwrap();
        assert_eq!(recs[0].gold_index(), 1);
        assert_eq!(recs[1].gold_index(), 1);
        assert_eq!(recs[2].gold_index(), 2);
    }
}
