// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;

use super::TokenSequence;
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
const PAD: &str = "<pad>";
const UNK: &str = "<unk>";

/// Word-level tokenizer.
///
/// Text is split on whitespace, and every colon also ends a word, so
/// `Answer:yes` becomes `Answer:` followed by `yes`. Ids 0 and 1 are
/// reserved for padding and unknown words; the rest follow first occurrence
/// in the text the vocabulary was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    words: Vec<String>,
    ids: HashMap<String, usize>,
}

/// Splits `text` into word pieces.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut rest = word;
        while let Some(i) = rest.find(':') {
            out.push(&rest[..=i]);
            rest = &rest[i + 1..];
        }
        if !rest.is_empty() {
            out.push(rest);
        }
    }
    out
}

impl Tokenizer {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tok = Self::from_words(Vec::new()).expect("reserved words only");
        for text in texts {
            for w in split_words(text) {
                if !tok.ids.contains_key(w) {
                    tok.ids.insert(w.to_string(), tok.words.len());
                    tok.words.push(w.to_string());
                }
            }
        }
        tok
    }

    /// Restores a tokenizer from its word list (without the reserved ids).
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut all = vec![PAD.to_string(), UNK.to_string()];
        all.extend(words);
        let mut ids = HashMap::new();
        for (i, w) in all.iter().enumerate() {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad vocabulary entry {w:?}")));
            }
            if ids.insert(w.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self { words: all, ids })
    }

    /// One word per line, in id order, reserved entries omitted.
    pub fn to_vocab_text(&self) -> String {
        let mut s = String::new();
        for w in &self.words[2..] {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_vocab_text(text: &str) -> Result<Self> {
        Self::from_words(
            text.lines()
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Result<TokenSequence> {
        let ids = split_words(text)
            .into_iter()
            .map(|w| self.id(w).unwrap_or(UNK_ID))
            .collect();
        TokenSequence::new(ids)
    }

    pub fn decode(&self, seq: &TokenSequence) -> String {
        let mut out = String::new();
        for &t in seq.tokens() {
            let w = self.word(t).unwrap_or(UNK);
            if !(out.is_empty() || out.ends_with(':')) {
                out.push(' ');
            }
            out.push_str(w);
        }
        out
    }
}
