//! Rule-based sentence splitting.

use crate::text::{tokenize, Token};
use serde::{Deserialize, Serialize};

/// Lowercased abbreviations (with their final period) that never end a
/// sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "mt.", "rev.", "hon.", "gen.", "col.", "lt.", "sgt.",
    "capt.", "gov.", "sen.", "rep.", "pres.", "u.s.", "u.k.", "u.n.", "d.c.", "e.g.", "i.e.", "etc.", "vs.", "inc.",
    "ltd.", "co.", "corp.", "no.", "fig.", "vol.", "a.m.", "p.m.", "jan.", "feb.", "mar.", "apr.", "jun.", "jul.",
    "aug.", "sep.", "sept.", "oct.", "nov.", "dec.",
];

const TERMINALS: &[char] = &['.', '?', '!'];
const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];
const OPENERS: &[char] = &['"', '\'', '\u{201c}', '\u{2018}', '(', '['];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub index: usize,
    pub text: String,
    /// Token offsets are relative to `text`.
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(index: usize, text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Sentence { index, text, tokens }
    }

    pub fn token_norms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.norm.as_str()).collect()
    }
}

fn is_abbreviation(text: &str, period_at: usize) -> bool {
    let before = &text[..=period_at];
    let word_start = before
        .rfind(char::is_whitespace)
        .map(|i| i + before[i..].chars().next().map_or(1, char::len_utf8))
        .unwrap_or(0);
    let word = before[word_start..].trim_start_matches(OPENERS);
    ABBREVIATIONS.contains(&word.to_lowercase().as_str())
}

/// Byte spans `[start, end)` of each sentence in `text`, whitespace trimmed.
///
/// A boundary is a run of `.?!` (plus closing quotes/brackets) followed by
/// whitespace and an uppercase letter or opening quote, or by the end of the
/// text. A single `.` ending a listed abbreviation is not a boundary.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut sent_start = 0usize;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !TERMINALS.contains(&c) {
            continue;
        }
        let mut run_end = i + c.len_utf8();
        let mut dots_only = c == '.';
        while let Some(&(j, d)) = chars.peek() {
            if TERMINALS.contains(&d) {
                dots_only = false;
                run_end = j + d.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        while let Some(&(j, d)) = chars.peek() {
            if CLOSERS.contains(&d) {
                run_end = j + d.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let rest = &text[run_end..];
        let after_ws = rest.trim_start();
        let next_start = text.len() - after_ws.len();
        let boundary = if after_ws.is_empty() {
            true
        } else if next_start == run_end {
            false
        } else {
            after_ws
                .chars()
                .next()
                .is_some_and(|n| n.is_uppercase() || OPENERS.contains(&n))
        };
        if !boundary {
            continue;
        }
        if dots_only && run_end == i + 1 && is_abbreviation(text, i) {
            continue;
        }
        push_span(text, sent_start, run_end, &mut spans);
        sent_start = next_start;
    }
    push_span(text, sent_start, text.len(), &mut spans);
    spans
}

fn push_span(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    if start >= end {
        return;
    }
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        out.push((start + lead, start + lead + trimmed.len()));
    }
}

pub fn split_sentences(text: &str) -> Vec<Sentence> {
    sentence_spans(text)
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| Sentence::new(i, &text[s..e]))
        .collect()
}
