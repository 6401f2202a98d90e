use std::collections::HashSet;

use crate::error::Result;

use super::critical::CriticalItem;
use super::tokens::{sentence_text, Token};
use super::window::Window;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Summary {
    /// Selected sentences, one per line.
    pub text: String,
    /// The implementation could not produce its normal output and fell back.
    pub degraded: bool,
}

/// Summarizes one window under a token budget. Implementations must keep the
/// output within `budget` whitespace tokens and should keep the sentences
/// carrying the supplied critical items.
pub trait Summarizer: Send + Sync {
    fn name(&self) -> &str;

    fn summarize(&self, window: &Window<'_>, critical: &[CriticalItem], budget: usize) -> Result<Summary>;
}

/// Deterministic sentence extraction.
///
/// Sentences are ranked by severity-weighted critical content, then by
/// earliest position, then by length. Critical sentences are packed first;
/// non-critical sentences are only added when every critical sentence fit,
/// and a non-critical sentence is skipped when one with the same template
/// (digits masked) was already taken from this window.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExtractiveSummarizer;

/// A sentence offered for selection.
#[derive(Debug, Clone)]
pub(crate) struct Candidate {
    pub pos: usize,
    pub len: usize,
    pub weight: u32,
    pub text: String,
}

pub(crate) fn template_key(sentence: &str) -> String {
    sentence
        .split(' ')
        .map(|w| if w.bytes().any(|b| b.is_ascii_digit()) { "#" } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Complete sentences of a window, in order.
pub(crate) fn window_sentences<'a>(window: &Window<'a>) -> Vec<(usize, &'a [Token])> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut skip_first = window.leading_partial;
    for (i, t) in window.tokens.iter().enumerate() {
        if t.brk {
            if !skip_first {
                out.push((start, &window.tokens[start..=i]));
            }
            skip_first = false;
            start = i + 1;
        }
    }
    out
}

/// Greedy criticals-first packing. Candidates are ranked by weight, then
/// position, then length; once a weighted candidate misses the budget no
/// unweighted one is taken. With `dedupe_templates`, an unweighted
/// candidate is skipped when one with the same template was already taken.
/// Returns the chosen candidates in position order.
pub(crate) fn pack(candidates: &[Candidate], budget: usize, dedupe_templates: bool) -> Vec<&Candidate> {
    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.pos.cmp(&b.pos)).then(b.len.cmp(&a.len)));
    let mut used = 0;
    let mut chosen: Vec<&Candidate> = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    let mut templates: HashSet<String> = HashSet::new();
    let mut dropped_critical = false;
    for c in ranked {
        if c.weight == 0 && dropped_critical {
            break;
        }
        if !seen.insert(c.text.as_str()) {
            continue;
        }
        if dedupe_templates && c.weight == 0 && !templates.insert(template_key(&c.text)) {
            continue;
        }
        if used + c.len <= budget {
            used += c.len;
            chosen.push(c);
        } else if c.weight > 0 {
            dropped_critical = true;
        }
    }
    chosen.sort_by_key(|c| c.pos);
    chosen
}

impl Summarizer for ExtractiveSummarizer {
    fn name(&self) -> &str {
        "extractive"
    }

    fn summarize(&self, window: &Window<'_>, critical: &[CriticalItem], budget: usize) -> Result<Summary> {
        let mut marks: Vec<(&str, u32)> = Vec::new();
        for item in critical {
            if let Some(m) = marks.iter_mut().find(|(t, _)| *t == item.text) {
                m.1 = m.1.max(item.kind.severity());
            } else {
                marks.push((item.text.as_str(), item.kind.severity()));
            }
        }
        let candidates: Vec<Candidate> = window_sentences(window)
            .into_iter()
            .map(|(pos, toks)| {
                let text = sentence_text(toks);
                let weight = marks.iter().filter(|(t, _)| text.contains(t)).map(|(_, w)| w).sum();
                Candidate { pos, len: toks.len(), weight, text }
            })
            .collect();
        let chosen = pack(&candidates, budget, true);
        Ok(Summary {
            text: chosen.iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n"),
            degraded: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::critical::{extract_critical, RuleSet};
    use crate::compressor::tokens::{count_tokens, tokenize};
    use crate::compressor::window::make_windows;

    fn run(text: &str, budget: usize) -> String {
        let toks = tokenize(text);
        let w = make_windows(&toks, 768, 0.5).unwrap();
        let items = extract_critical(&w[0], &RuleSet::default());
        ExtractiveSummarizer.summarize(&w[0], &items, budget).unwrap().text
    }

    #[test]
    fn five_sentence_fixture() {
        // No critical content: earliest sentences win, template repeats are skipped.
        let text = "service started on port 8080\n\
                    cache warmed with 120 keys\n\
                    cache warmed with 130 keys\n\
                    request served in 12 ms\n\
                    background job finished cleanly";
        assert_eq!(run(text, 10), "service started on port 8080\ncache warmed with 120 keys");
        assert_eq!(
            run(text, 15),
            "service started on port 8080\ncache warmed with 120 keys\nrequest served in 12 ms"
        );
        assert_eq!(count_tokens(&run(text, 20)), 19);
    }

    #[test]
    fn criticals_come_first() {
        let text = "routine line one here\nroutine line two here\nERR-5003 connection pool exhausted on db";
        assert_eq!(run(text, 6), "ERR-5003 connection pool exhausted on db");
    }

    #[test]
    fn no_filler_after_a_dropped_critical() {
        let text = "ok\nERR-5003 connection pool exhausted on db now\nERR-4101 out of memory";
        let out = run(text, 5);
        assert_eq!(out, "ERR-4101 out of memory");
        assert!(count_tokens(&out) <= 5);
    }

    #[test]
    fn leading_partial_sentence_is_skipped() {
        let toks = tokenize("alpha beta gamma\ndelta epsilon");
        let w = make_windows(&toks, 4, 0.5).unwrap();
        let sentences: Vec<_> = window_sentences(&w[1]).into_iter().map(|(_, t)| sentence_text(t)).collect();
        assert_eq!(sentences, ["delta epsilon"]);
    }

    #[test]
    fn template_masks_numbers() {
        assert_eq!(template_key("served in 12 ms id=ab3"), "served in # ms #");
    }
}
