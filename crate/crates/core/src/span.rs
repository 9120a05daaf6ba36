//! Character spans and the span algebra used throughout the pipeline.
//!
//! All offsets count Unicode scalar values, never bytes. A span is a
//! half-open interval `[start, end)` with `start < end`; "no span" is
//! expressed with `Option<Span>`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::InvalidSpan { start, end, len: end });
        }
        Ok(Span { start, end })
    }

    /// Builds a span and checks it against a context of `len` characters.
    pub fn within(start: usize, end: usize, len: usize) -> Result<Self> {
        if start >= end || end > len {
            return Err(Error::InvalidSpan { start, end, len });
        }
        Ok(Span { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    pub fn shift(&self, by: usize) -> Span {
        Span { start: self.start + by, end: self.end + by }
    }

    pub fn check(&self, len: usize) -> Result<()> {
        if self.start >= self.end || self.end > len {
            return Err(Error::InvalidSpan { start: self.start, end: self.end, len });
        }
        Ok(())
    }

    /// Slices `text` by character offsets. The span must be valid for `text`.
    pub fn slice<'a>(&self, text: &'a str) -> Result<&'a str> {
        char_slice(text, self.start, self.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Byte offset of the `idx`-th character; `idx == char_len` maps to `text.len()`.
fn byte_offset(text: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    match text.char_indices().nth(idx) {
        Some((b, _)) => Some(b),
        None if char_len(text) == idx => Some(text.len()),
        None => None,
    }
}

pub fn char_slice(text: &str, start: usize, end: usize) -> Result<&str> {
    let invalid = || Error::InvalidSpan { start, end, len: char_len(text) };
    if start > end {
        return Err(invalid());
    }
    let b0 = byte_offset(text, start).ok_or_else(invalid)?;
    let b1 = byte_offset(text, end).ok_or_else(invalid)?;
    Ok(&text[b0..b1])
}

/// Coalesces spans whose gap is empty or consists only of `bridge_chars`.
///
/// The result is sorted and disjoint. Overlapping and nested inputs are
/// absorbed into their covering span.
pub fn merge_adjacent_spans(spans: &[Span], context: &str, bridge_chars: &BTreeSet<char>) -> Result<Vec<Span>> {
    let chars: Vec<char> = context.chars().collect();
    for s in spans {
        s.check(chars.len())?;
    }
    let mut sorted = spans.to_vec();
    sorted.sort();

    let mut out: Vec<Span> = Vec::with_capacity(sorted.len());
    for s in sorted {
        match out.last_mut() {
            Some(cur) if s.start <= cur.end => cur.end = cur.end.max(s.end),
            Some(cur) if chars[cur.end..s.start].iter().all(|c| bridge_chars.contains(c)) => {
                cur.end = s.end;
            }
            _ => out.push(s),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub span: Span,
    pub text: String,
}

/// Splits `text` after every delimiter character. Delimiters stay attached
/// to the sentence they terminate and the returned spans tile the text.
pub fn split_sentences(text: &str, delimiters: &BTreeSet<char>) -> Vec<Sentence> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (i, c) in text.chars().enumerate() {
        current.push(c);
        if delimiters.contains(&c) {
            out.push(Sentence {
                index: out.len(),
                span: Span { start, end: i + 1 },
                text: std::mem::take(&mut current),
            });
            start = i + 1;
        }
    }
    if !current.is_empty() {
        let end = start + char_len(&current);
        out.push(Sentence { index: out.len(), span: Span { start, end }, text: current });
    }
    out
}

/// Splits a sentence further into clauses; clause spans stay in document
/// coordinates and are re-indexed from zero.
pub fn split_clauses(sentence: &Sentence, delimiters: &BTreeSet<char>) -> Vec<Sentence> {
    split_sentences(&sentence.text, delimiters)
        .into_iter()
        .map(|mut c| {
            c.span = c.span.shift(sentence.span.start);
            c
        })
        .collect()
}

/// Rebases a document span onto a sentence.
///
/// Returns `Ok(None)` when the span lies outside the sentence and a
/// boundary-violation error when it straddles the sentence edge.
pub fn project_span(span: Span, sentence: &Span) -> Result<Option<Span>> {
    if sentence.contains(&span) {
        Ok(Some(Span { start: span.start - sentence.start, end: span.end - sentence.start }))
    } else if span.overlaps(sentence) {
        Err(Error::BoundaryViolation { span, sentence: *sentence })
    } else {
        Ok(None)
    }
}
