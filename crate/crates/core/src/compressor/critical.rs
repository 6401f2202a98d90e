//! Deterministic extraction of operationally critical spans.

use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AoiError, Result};
use crate::simenv::catalog::fault_lexicon;

use super::window::Window;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CriticalKind {
    ErrorCode,
    FaultSignature,
    ThresholdBreach,
    CausalMarker,
}

impl CriticalKind {
    /// Ranking weight used when budget forces a choice between criticals.
    pub fn severity(self) -> u32 {
        match self {
            CriticalKind::ErrorCode => 8,
            CriticalKind::FaultSignature => 4,
            CriticalKind::ThresholdBreach => 2,
            CriticalKind::CausalMarker => 1,
        }
    }

    fn slug(self) -> &'static str {
        match self {
            CriticalKind::ErrorCode => "error-code",
            CriticalKind::FaultSignature => "fault-signature",
            CriticalKind::ThresholdBreach => "threshold-breach",
            CriticalKind::CausalMarker => "causal-marker",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticalItem {
    pub kind: CriticalKind,
    pub text: String,
    pub source_window: usize,
    pub tag_id: String,
}

/// Stable content tag for a critical span: 16 hex chars of
/// SHA-256 over `kind:text`.
pub fn tag_id(kind: CriticalKind, text: &str) -> String {
    let mut h = Sha256::new();
    h.update(kind.slug().as_bytes());
    h.update(b":");
    h.update(text.as_bytes());
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Patterns for the four critical kinds. The JSON form has one list per
/// kind; `fault_signature` entries are literal phrases, the others regexes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSpec {
    pub error_code: Vec<String>,
    pub fault_signature: Vec<String>,
    pub threshold_breach: Vec<String>,
    pub causal_marker: Vec<String>,
}

impl Default for RuleSpec {
    fn default() -> Self {
        RuleSpec {
            error_code: vec![r"\b[A-Z][A-Z0-9]{1,9}-\d{3,5}\b".into()],
            fault_signature: fault_lexicon().iter().map(|s| s.to_string()).collect(),
            threshold_breach: vec![
                r"(?i)\b(?:cpu|memory|mem|latency|p99|error[-_]rate|availability)[ \t]*(?:>=|<=|>|<)[ \t]*\d+(?:\.\d+)?(?:ms|%|s)?".into(),
            ],
            causal_marker: vec![r"(?i)\b(?:caused by|due to|triggered)\b".into()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuleSet {
    rules: Vec<(CriticalKind, Regex)>,
}

impl Default for RuleSet {
    fn default() -> Self {
        RuleSet::from_spec(&RuleSpec::default()).expect("shipped rules compile")
    }
}

impl RuleSet {
    pub fn from_spec(spec: &RuleSpec) -> Result<Self> {
        let compile = |p: &str| Regex::new(p).map_err(|e| AoiError::Config(format!("rule {p:?}: {e}")));
        let mut rules = Vec::new();
        for p in &spec.error_code {
            rules.push((CriticalKind::ErrorCode, compile(p)?));
        }
        if !spec.fault_signature.is_empty() {
            let alt = spec.fault_signature.iter().map(|s| regex::escape(s)).collect::<Vec<_>>().join("|");
            rules.push((CriticalKind::FaultSignature, compile(&format!(r"(?i)\b(?:{alt})\b"))?));
        }
        for p in &spec.threshold_breach {
            rules.push((CriticalKind::ThresholdBreach, compile(p)?));
        }
        for p in &spec.causal_marker {
            rules.push((CriticalKind::CausalMarker, compile(p)?));
        }
        if rules.is_empty() {
            return Err(AoiError::Config("critical rule set is empty".into()));
        }
        Ok(RuleSet { rules })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AoiError::Config(format!("{}: {e}", path.display())))?;
        let spec: RuleSpec =
            serde_json::from_str(&text).map_err(|e| AoiError::Config(format!("rule file: {e}")))?;
        Self::from_spec(&spec)
    }

    /// Matches in `text`, one item per (rule, match).
    pub fn scan(&self, text: &str, source_window: usize) -> Vec<CriticalItem> {
        let mut items = Vec::new();
        for (kind, re) in &self.rules {
            for m in re.find_iter(text) {
                items.push(CriticalItem {
                    kind: *kind,
                    text: m.as_str().to_string(),
                    source_window,
                    tag_id: tag_id(*kind, m.as_str()),
                });
            }
        }
        items
    }

    /// Severity-weighted criticality of a sentence.
    pub fn weight(&self, sentence: &str) -> u32 {
        self.rules
            .iter()
            .map(|(kind, re)| re.find_iter(sentence).count() as u32 * kind.severity())
            .sum()
    }
}

pub fn extract_critical(window: &Window<'_>, rules: &RuleSet) -> Vec<CriticalItem> {
    let text = super::tokens::join_tokens(window.tokens);
    rules.scan(&text, window.index)
}
