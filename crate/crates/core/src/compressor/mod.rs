//! Sliding-window context compression.
//!
//! The raw token stream is cut into overlapping windows, critical spans are
//! extracted per window, each window is summarized under a budget of
//! `window_size * (1 - target_ratio)` tokens, and the summaries are merged in
//! window order with duplicate sentences removed. When the merged text still
//! retains more than `1 - target_ratio` of the input, one secondary pass
//! re-selects merged sentences, criticals first, within half the summed
//! window budgets (each token is seen by two windows at 50% overlap), and
//! never below half of one window budget.

pub mod critical;
pub mod summarizer;
pub mod tokens;
pub mod window;

use std::collections::{BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{AoiError, Result};
use crate::memory::{CompressedContextEntry, EntryId, MemoryStore};

pub use critical::{extract_critical, tag_id, CriticalItem, CriticalKind, RuleSet, RuleSpec};
pub use summarizer::{ExtractiveSummarizer, Summarizer, Summary};
pub use tokens::{count_tokens, tokenize, Token};
pub use window::{make_windows, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub window_size: usize,
    pub overlap_ratio: f64,
    pub target_ratio: f64,
}

impl Default for CompressionConfig {
    fn default() -> Self {
        CompressionConfig { window_size: 768, overlap_ratio: 0.5, target_ratio: 0.72 }
    }
}

impl CompressionConfig {
    pub fn check(&self) -> Result<()> {
        window::stride(self.window_size, self.overlap_ratio)?;
        if !(self.target_ratio > 0.0 && self.target_ratio < 1.0) {
            return Err(AoiError::Config(format!("target ratio must lie in (0, 1), got {}", self.target_ratio)));
        }
        Ok(())
    }

    /// Per-window summary budget of the first pass.
    pub fn budget(&self) -> usize {
        ((self.window_size as f64 * (1.0 - self.target_ratio)).floor() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Compression {
    pub summary_text: String,
    pub raw_tokens: usize,
    pub compressed_tokens: usize,
    /// Critical items found in the raw input, one per distinct tag.
    pub critical_items: Vec<CriticalItem>,
    pub preserved_tags: BTreeSet<String>,
    pub windows: usize,
    pub secondary_pass: bool,
    pub degraded: bool,
}

impl Compression {
    pub fn ccr(&self) -> f64 {
        ccr(self.raw_tokens, self.compressed_tokens).unwrap_or(0.0)
    }

    pub fn into_entry(self, entry_id: EntryId, created_at: f64, sources: BTreeSet<EntryId>) -> CompressedContextEntry {
        CompressedContextEntry {
            entry_id,
            created_at,
            summary_text: self.summary_text,
            source_entry_ids: sources,
            preserved_tags: self.preserved_tags,
            ttl: crate::memory::COMPRESSED_TTL,
            degraded: self.degraded,
        }
    }
}

#[derive(Clone)]
pub struct Compressor {
    pub config: CompressionConfig,
    pub rules: RuleSet,
    summarizer: Arc<dyn Summarizer>,
}

impl std::fmt::Debug for Compressor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Compressor")
            .field("config", &self.config)
            .field("summarizer", &self.summarizer.name())
            .finish()
    }
}

impl Default for Compressor {
    fn default() -> Self {
        Compressor::new(CompressionConfig::default(), Arc::new(ExtractiveSummarizer))
    }
}

struct PassOutput {
    sentences: Vec<String>,
    items: Vec<CriticalItem>,
    windows: usize,
    budget_total: usize,
    degraded: bool,
}

impl Compressor {
    pub fn new(config: CompressionConfig, summarizer: Arc<dyn Summarizer>) -> Self {
        Compressor { config, rules: RuleSet::default(), summarizer }
    }

    pub fn with_rules(mut self, rules: RuleSet) -> Self {
        self.rules = rules;
        self
    }

    pub fn summarizer_name(&self) -> &str {
        self.summarizer.name()
    }

    fn pass(&self, tokens: &[Token], budget: usize) -> Result<PassOutput> {
        let windows = make_windows(tokens, self.config.window_size, self.config.overlap_ratio)?;
        let mut seen: HashSet<String> = HashSet::new();
        let mut sentences = Vec::new();
        let mut items = Vec::new();
        let mut degraded = false;
        let mut budget_total = 0;
        let keep = 1.0 - self.config.target_ratio;
        for w in &windows {
            budget_total += ((w.tokens.len() as f64 * keep).floor() as usize).min(budget);
            let critical = extract_critical(w, &self.rules);
            let summary = self.summarizer.summarize(w, &critical, budget)?;
            let used = count_tokens(&summary.text);
            if used > budget {
                return Err(AoiError::Summarizer {
                    implementation: self.summarizer.name().to_string(),
                    message: format!("window {} summary has {used} tokens, budget {budget}", w.index),
                });
            }
            degraded |= summary.degraded;
            for line in summary.text.lines().map(str::trim).filter(|l| !l.is_empty()) {
                if seen.insert(line.to_string()) {
                    sentences.push(line.to_string());
                }
            }
            items.extend(critical);
        }
        Ok(PassOutput { sentences, items, windows: windows.len(), budget_total, degraded })
    }

    fn secondary(&self, sentences: &[String], budget: usize) -> String {
        let candidates: Vec<summarizer::Candidate> = sentences
            .iter()
            .enumerate()
            .map(|(pos, text)| summarizer::Candidate {
                pos,
                len: count_tokens(text),
                weight: self.rules.scan(text, 0).iter().map(|i| i.kind.severity()).sum(),
                text: text.clone(),
            })
            .collect();
        summarizer::pack(&candidates, budget, false).iter().map(|c| c.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn compress_tokens(&self, raw: &[Token]) -> Result<Compression> {
        self.config.check()?;
        if raw.is_empty() {
            return Err(AoiError::Contract("cannot compress empty context".into()));
        }
        let budget = self.config.budget();
        let first = self.pass(raw, budget)?;
        let mut text = first.sentences.join("\n");
        let degraded = first.degraded;
        let mut secondary_pass = false;
        let allowance = 1.0 - self.config.target_ratio;
        if count_tokens(&text) as f64 > allowance * raw.len() as f64 {
            text = self.secondary(&first.sentences, (first.budget_total / 2).max(budget / 2).max(1));
            secondary_pass = true;
        }

        // Window-level matches can be fragments of a span cut by the window
        // edge; only tags that exist in the full input count.
        let full: BTreeSet<String> =
            self.rules.scan(&tokens::join_tokens(raw), 0).into_iter().map(|i| i.tag_id).collect();
        let mut critical_items: Vec<CriticalItem> = Vec::new();
        let mut tags_seen = BTreeSet::new();
        for item in first.items {
            if full.contains(&item.tag_id) && tags_seen.insert(item.tag_id.clone()) {
                critical_items.push(item);
            }
        }
        let preserved_tags = critical_items
            .iter()
            .filter(|i| text.contains(i.text.as_str()))
            .map(|i| i.tag_id.clone())
            .collect();
        Ok(Compression {
            raw_tokens: raw.len(),
            compressed_tokens: count_tokens(&text),
            summary_text: text,
            critical_items,
            preserved_tags,
            windows: first.windows,
            secondary_pass,
            degraded,
        })
    }

    pub fn compress_text(&self, raw: &str) -> Result<Compression> {
        self.compress_tokens(&tokenize(raw))
    }

    /// Compresses `raw` and stores the result in the compressed layer. The
    /// stored entry keeps only preserved tags its source entries carry.
    pub fn compress_into(
        &self,
        memory: &mut MemoryStore,
        raw: &str,
        sources: BTreeSet<EntryId>,
        now: f64,
    ) -> Result<(EntryId, Compression)> {
        let compression = self.compress_text(raw)?;
        let id = memory.next_entry_id();
        let mut entry = compression.clone().into_entry(id, now, sources);
        let held: Vec<_> = entry.source_entry_ids.iter().filter_map(|s| memory.get_raw(*s, now)).collect();
        if held.len() == entry.source_entry_ids.len() {
            let tagged: BTreeSet<&String> = held.iter().flat_map(|e| e.critical_tags.iter()).collect();
            entry.preserved_tags.retain(|t| tagged.contains(t));
        }
        memory.put_compressed(entry)?;
        Ok((id, compression))
    }
}

/// One-shot compression with explicit parameters.
pub fn compress(
    raw: &[Token],
    window_size: usize,
    overlap_ratio: f64,
    target_ratio: f64,
    summarizer: Arc<dyn Summarizer>,
) -> Result<Compression> {
    Compressor::new(CompressionConfig { window_size, overlap_ratio, target_ratio }, summarizer).compress_tokens(raw)
}

/// Size-reduction fraction `1 - compressed / raw`.
pub fn ccr(raw_token_count: usize, compressed_token_count: usize) -> Result<f64> {
    if raw_token_count == 0 {
        return Err(AoiError::Contract("raw token count must be positive".into()));
    }
    if compressed_token_count > raw_token_count {
        return Err(AoiError::Contract(format!(
            "compressed size {compressed_token_count} exceeds raw size {raw_token_count}"
        )));
    }
    Ok(1.0 - compressed_token_count as f64 / raw_token_count as f64)
}

/// Fraction of ground-truth critical tags preserved; 1 for empty truth.
pub fn ips(ground_truth_tags: &BTreeSet<String>, preserved_tags: &BTreeSet<String>) -> f64 {
    if ground_truth_tags.is_empty() {
        return 1.0;
    }
    ground_truth_tags.intersection(preserved_tags).count() as f64 / ground_truth_tags.len() as f64
}
