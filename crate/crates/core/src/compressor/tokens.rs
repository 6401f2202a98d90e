//! Whitespace tokenization that keeps punctuation on tokens and remembers
//! where sentences end.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// True when a sentence ends after this token (end of line, or a token
    /// ending in `.`, `!` or `?`).
    pub brk: bool,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for line in text.lines() {
        let start = out.len();
        for word in line.split_whitespace() {
            let brk = word.ends_with(['.', '!', '?']) && word.len() > 1;
            out.push(Token { text: word.to_string(), brk });
        }
        if out.len() > start {
            out.last_mut().unwrap().brk = true;
        }
    }
    out
}

/// Number of whitespace-separated tokens in `text`.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Renders tokens with a newline after every sentence break.
pub fn join_tokens(tokens: &[Token]) -> String {
    let mut s = String::with_capacity(tokens.len() * 8);
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(if tokens[i - 1].brk { '\n' } else { ' ' });
        }
        s.push_str(&t.text);
    }
    s
}

/// A complete sentence as a token range of the full input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
}

/// Splits the whole input into sentence spans.
pub fn sentence_spans(tokens: &[Token]) -> Vec<SentenceSpan> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.brk {
            spans.push(SentenceSpan { start, end: i + 1 });
            start = i + 1;
        }
    }
    if start < tokens.len() {
        spans.push(SentenceSpan { start, end: tokens.len() });
    }
    spans
}

pub fn sentence_text(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}
