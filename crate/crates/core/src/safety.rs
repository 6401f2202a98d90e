//! Statement-level command parsing and the whitelist/blacklist gate.
//!
//! A script is split into statements on newlines and `;` outside quoted
//! spans. Each statement's first word is its verb. Probe scripts are accepted
//! only when every verb is whitelisted (unknown verbs are rejected), while
//! executor scripts are rejected only for verbs in the destructive-deny set.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AoiError, Result};

pub const DEFAULT_WHITELIST: [&str; 6] = ["SELECT", "SHOW", "DESCRIBE", "GET", "LIST", "READ"];
pub const DEFAULT_BLACKLIST: [&str; 6] = ["DELETE", "UPDATE", "INSERT", "DROP", "ALTER", "TRUNCATE"];
pub const DEFAULT_EXECUTOR_DENY: [&str; 2] = ["DROP", "TRUNCATE"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    ReadOnly,
    Mutating,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub raw_text: String,
    pub verb: String,
    pub classification: Classification,
    pub arguments: Vec<String>,
}

impl Command {
    /// Parses a single statement with the default policy. Intended for
    /// catalog-built commands; scripts should go through [`tokenize_script`].
    pub fn parse(statement: &str) -> Command {
        SafetyPolicy::default().command(statement.trim())
    }

    pub fn is_mutating(&self) -> bool {
        self.classification != Classification::ReadOnly
    }

    /// Verb and arguments joined by single spaces.
    pub fn canonical(&self) -> String {
        let mut s = self.verb.clone();
        for a in &self.arguments {
            s.push(' ');
            s.push_str(a);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyKind {
    ProbePolicy,
    ExecutorPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub verb: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub safe: bool,
    pub violations: Vec<Violation>,
}

/// Verb sets driving classification and validation. Loadable from a JSON
/// policy file with the keys `whitelist`, `blacklist` and `executor_deny`;
/// missing keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SafetyPolicy {
    pub whitelist: BTreeSet<String>,
    pub blacklist: BTreeSet<String>,
    pub executor_deny: BTreeSet<String>,
}

impl Default for SafetyPolicy {
    fn default() -> Self {
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        SafetyPolicy {
            whitelist: set(&DEFAULT_WHITELIST),
            blacklist: set(&DEFAULT_BLACKLIST),
            executor_deny: set(&DEFAULT_EXECUTOR_DENY),
        }
    }
}

impl SafetyPolicy {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut policy: SafetyPolicy =
            serde_json::from_str(text).map_err(|e| AoiError::Config(format!("policy file: {e}")))?;
        let upper = |s: &BTreeSet<String>| s.iter().map(|v| v.to_ascii_uppercase()).collect();
        policy.whitelist = upper(&policy.whitelist);
        policy.blacklist = upper(&policy.blacklist);
        policy.executor_deny = upper(&policy.executor_deny);
        if let Some(v) = policy.whitelist.intersection(&policy.blacklist).next() {
            return Err(AoiError::Config(format!("verb {v} is both whitelisted and blacklisted")));
        }
        Ok(policy)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AoiError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn classify_verb(&self, verb: &str) -> Classification {
        let verb = verb.to_ascii_uppercase();
        if self.whitelist.contains(&verb) {
            Classification::ReadOnly
        } else if self.blacklist.contains(&verb) {
            Classification::Mutating
        } else {
            Classification::Unknown
        }
    }

    pub fn classify_command(&self, cmd: &Command) -> Classification {
        self.classify_verb(&cmd.verb)
    }

    fn command(&self, statement: &str) -> Command {
        let mut words = statement.split_whitespace();
        let verb = words.next().unwrap_or_default().to_ascii_uppercase();
        Command {
            raw_text: statement.to_string(),
            classification: self.classify_verb(&verb),
            verb,
            arguments: words.map(str::to_string).collect(),
        }
    }

    pub fn tokenize_script(&self, script: &str) -> Result<Vec<Command>> {
        Ok(split_statements(script)?.into_iter().map(|s| self.command(s)).collect())
    }

    /// Collects every violation, not just the first.
    pub fn validate_script(&self, commands: &[Command], kind: PolicyKind) -> SafetyVerdict {
        let mut violations = Vec::new();
        for (index, cmd) in commands.iter().enumerate() {
            let class = self.classify_command(cmd);
            let reason = match kind {
                PolicyKind::ProbePolicy => match class {
                    Classification::ReadOnly => None,
                    Classification::Mutating => Some("blacklisted verb in read-only script"),
                    Classification::Unknown => Some("verb not whitelisted for read-only script"),
                },
                PolicyKind::ExecutorPolicy => self
                    .executor_deny
                    .contains(&cmd.verb.to_ascii_uppercase())
                    .then_some("destructive verb denied for executor"),
            };
            if let Some(reason) = reason {
                violations.push(Violation { index, verb: cmd.verb.clone(), reason: reason.to_string() });
            }
        }
        SafetyVerdict { safe: violations.is_empty(), violations }
    }
}

/// Splits a script into trimmed, non-empty statements. Separators are
/// newlines and `;` outside single- or double-quoted spans.
fn split_statements(script: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let mut start = 0;
    // (quote char, line, column) of the currently open quote
    let mut open: Option<(char, usize, usize)> = None;
    let mut line = 1;
    let mut column = 0;
    for (i, ch) in script.char_indices() {
        column += 1;
        match open {
            Some((q, _, _)) => {
                if ch == q {
                    open = None;
                } else if ch == '\n' {
                    line += 1;
                    column = 0;
                }
            }
            None => match ch {
                '\'' | '"' => open = Some((ch, line, column)),
                ';' | '\n' => {
                    push_trimmed(&mut out, &script[start..i]);
                    start = i + ch.len_utf8();
                    if ch == '\n' {
                        line += 1;
                        column = 0;
                    }
                }
                _ => {}
            },
        }
    }
    if let Some((q, line, column)) = open {
        return Err(AoiError::Parse { line, column, message: format!("unterminated {q} quote") });
    }
    push_trimmed(&mut out, &script[start..]);
    Ok(out)
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, statement: &'a str) {
    let s = statement.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

/// Tokenizes with the shipped default verb sets.
pub fn tokenize_script(script: &str) -> Result<Vec<Command>> {
    SafetyPolicy::default().tokenize_script(script)
}

pub fn classify_command(cmd: &Command) -> Classification {
    SafetyPolicy::default().classify_command(cmd)
}

pub fn validate_script(commands: &[Command], kind: PolicyKind) -> SafetyVerdict {
    SafetyPolicy::default().validate_script(commands, kind)
}
