//! Remote summarizer over a chat-completion style HTTP endpoint.
//!
//! Request body: `{"model", "prompt", "max_tokens"}`. The response text is
//! read from `text`, `choices[0].text` or `choices[0].message.content`,
//! whichever is present. The adapter enforces the token budget itself and
//! falls back to the extractive summarizer when the service cannot be
//! reached.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::compressor::tokens::join_tokens;
use crate::compressor::{CriticalItem, ExtractiveSummarizer, Summarizer, Summary, Window};
use crate::error::{AoiError, Result};

pub const DEFAULT_TOKEN_ENV: &str = "AOI_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            endpoint: "http://127.0.0.1:8080/v1/completions".into(),
            model: "summarizer".into(),
            timeout_secs: 30.0,
            max_retries: 2,
            backoff_ms: 250,
            token_env: DEFAULT_TOKEN_ENV.into(),
            max_in_flight: 4,
        }
    }
}

impl RemoteConfig {
    pub fn check(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(AoiError::Config("remote summarizer endpoint is empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(AoiError::Config(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.max_in_flight == 0 {
            return Err(AoiError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// The service answered with a non-success status.
    Status(u16, String),
    /// No usable answer: connection failure, timeout, unreadable body.
    Unavailable(String),
}

/// One HTTP POST of a JSON body, returning the response body.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, token: &str, body: &str, timeout: Duration) -> std::result::Result<String, TransportError>;
}

#[derive(Debug, Default)]
pub struct HttpTransport;

impl Transport for HttpTransport {
    fn post(&self, url: &str, token: &str, body: &str, timeout: Duration) -> std::result::Result<String, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut resp = agent
            .post(url)
            .header("Authorization", &format!("Bearer {token}"))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| TransportError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| TransportError::Unavailable(e.to_string()))?;
        if (200..300).contains(&status) {
            Ok(text)
        } else {
            Err(TransportError::Status(status, text))
        }
    }
}

struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn acquire(&self) {
        let mut n = self.slots.lock().unwrap_or_else(|p| p.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|p| p.into_inner());
        }
        *n -= 1;
    }

    fn release(&self) {
        *self.slots.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.freed.notify_one();
    }
}

pub struct RemoteSummarizer {
    config: RemoteConfig,
    token: String,
    transport: Arc<dyn Transport>,
    gate: Gate,
}

impl std::fmt::Debug for RemoteSummarizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteSummarizer").field("config", &self.config).finish_non_exhaustive()
    }
}

impl RemoteSummarizer {
    /// Reads the token from `config.token_env`; refuses to start without it.
    pub fn from_env(config: RemoteConfig) -> Result<Self> {
        let token = std::env::var(&config.token_env).unwrap_or_default();
        Self::new(config, token, Arc::new(HttpTransport))
    }

    pub fn new(config: RemoteConfig, token: impl Into<String>, transport: Arc<dyn Transport>) -> Result<Self> {
        config.check()?;
        let token = token.into();
        if token.trim().is_empty() {
            return Err(AoiError::Config(format!("remote summarizer needs an auth token in ${}", config.token_env)));
        }
        let gate = Gate { slots: Mutex::new(config.max_in_flight), freed: Condvar::new() };
        Ok(RemoteSummarizer { config, token, transport, gate })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn request(&self, body: &str) -> std::result::Result<String, TransportError> {
        self.gate.acquire();
        let out = self.transport.post(
            &self.config.endpoint,
            &self.token,
            body,
            Duration::from_secs_f64(self.config.timeout_secs),
        );
        self.gate.release();
        out
    }
}

pub fn build_prompt(window_text: &str, critical: &[CriticalItem], budget: usize) -> String {
    let mut p = String::from(
        "Summarize the operational log excerpt below for an incident responder.\n\
         Keep every fact listed under MUST PRESERVE verbatim. Write one sentence per line.\n",
    );
    p.push_str(&format!("Use at most {budget} whitespace-separated tokens.\n\nMUST PRESERVE:\n"));
    for item in critical {
        p.push_str(&format!("- {}\n", item.text));
    }
    p.push_str("\nLOG:\n");
    p.push_str(window_text);
    p
}

fn response_text(body: &str) -> Option<String> {
    let v: Value = serde_json::from_str(body).ok()?;
    let pick = |v: &Value| v.as_str().map(str::to_string);
    pick(&v["text"])
        .or_else(|| pick(&v["choices"][0]["text"]))
        .or_else(|| pick(&v["choices"][0]["message"]["content"]))
}

/// Cuts `text` to at most `budget` whitespace tokens, keeping line breaks.
pub fn truncate_to_budget(text: &str, budget: usize) -> (String, bool) {
    let mut left = budget;
    let mut lines = Vec::new();
    let mut cut = false;
    for line in text.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        if words.len() > left {
            cut = true;
            if left > 0 {
                lines.push(words[..left].join(" "));
            }
            break;
        }
        left -= words.len();
        lines.push(words.join(" "));
    }
    (lines.join("\n"), cut)
}

impl Summarizer for RemoteSummarizer {
    fn name(&self) -> &str {
        "remote"
    }

    fn summarize(&self, window: &Window<'_>, critical: &[CriticalItem], budget: usize) -> Result<Summary> {
        let body = serde_json::json!({
            "model": self.config.model,
            "prompt": build_prompt(&join_tokens(window.tokens), critical, budget),
            "max_tokens": budget,
        })
        .to_string();
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.request(&body) {
                Ok(raw) => {
                    let Some(text) = response_text(&raw) else { continue };
                    let (text, cut) = truncate_to_budget(&text, budget);
                    return Ok(Summary { text, degraded: cut });
                }
                Err(TransportError::Status(code @ (401 | 403), _)) => {
                    return Err(AoiError::Config(format!("remote summarizer rejected credentials (HTTP {code})")));
                }
                Err(_) => {}
            }
        }
        let fallback = ExtractiveSummarizer.summarize(window, critical, budget)?;
        Ok(Summary { text: fallback.text, degraded: true })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::{make_windows, tokenize, CompressionConfig, Compressor};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        replies: Mutex<Vec<std::result::Result<String, TransportError>>>,
        calls: AtomicUsize,
        last_body: Mutex<String>,
    }

    impl Scripted {
        fn new(replies: Vec<std::result::Result<String, TransportError>>) -> Arc<Self> {
            Arc::new(Scripted { replies: Mutex::new(replies), calls: AtomicUsize::new(0), last_body: Mutex::new(String::new()) })
        }
    }

    impl Transport for Scripted {
        fn post(&self, _: &str, _: &str, body: &str, _: Duration) -> std::result::Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            *self.last_body.lock().unwrap() = body.to_string();
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                Err(TransportError::Unavailable("no reply".into()))
            } else {
                r.remove(0)
            }
        }
    }

    fn quick() -> RemoteConfig {
        RemoteConfig { backoff_ms: 0, ..RemoteConfig::default() }
    }

    const LOG: &str = "db pool at 95% capacity.\nERR-5003 connection refused on db.\nroutine heartbeat ok.";

    fn run(s: &RemoteSummarizer, budget: usize) -> Result<Summary> {
        let toks = tokenize(LOG);
        let w = make_windows(&toks, 64, 0.5).unwrap();
        let rules = crate::compressor::RuleSet::default();
        let crit = crate::compressor::extract_critical(&w[0], &rules);
        s.summarize(&w[0], &crit, budget)
    }

    #[test]
    fn missing_token_is_a_config_error() {
        let err = RemoteSummarizer::new(quick(), "  ", Scripted::new(vec![])).unwrap_err();
        assert!(matches!(err, AoiError::Config(_)));
    }

    #[test]
    fn compliant_reply_is_accepted_verbatim() {
        let t = Scripted::new(vec![Ok(r#"{"text":"ERR-5003 connection refused on db."}"#.into())]);
        let s = RemoteSummarizer::new(quick(), "k", t.clone()).unwrap();
        let out = run(&s, 20).unwrap();
        assert_eq!(out, Summary { text: "ERR-5003 connection refused on db.".into(), degraded: false });
        let body: Value = serde_json::from_str(&t.last_body.lock().unwrap()).unwrap();
        assert_eq!(body["max_tokens"], 20);
        let prompt = body["prompt"].as_str().unwrap();
        assert!(prompt.contains("MUST PRESERVE:\n- ERR-5003"));
        assert!(prompt.contains("routine heartbeat ok."));
    }

    #[test]
    fn overrun_is_truncated_and_flagged() {
        let long = vec!["w"; 60].join(" ");
        let t = Scripted::new(vec![Ok(serde_json::json!({"choices": [{"message": {"content": long}}]}).to_string())]);
        let s = RemoteSummarizer::new(quick(), "k", t).unwrap();
        let out = run(&s, 10).unwrap();
        assert_eq!(out.text.split_whitespace().count(), 10);
        assert!(out.degraded);
    }

    #[test]
    fn unreachable_service_falls_back_after_retries() {
        let t = Scripted::new(vec![]);
        let s = RemoteSummarizer::new(quick(), "k", t.clone()).unwrap();
        let out = run(&s, 20).unwrap();
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
        assert!(out.degraded);
        let toks = tokenize(LOG);
        let w = make_windows(&toks, 64, 0.5).unwrap();
        let crit = crate::compressor::extract_critical(&w[0], &crate::compressor::RuleSet::default());
        assert_eq!(out.text, ExtractiveSummarizer.summarize(&w[0], &crit, 20).unwrap().text);
    }

    #[test]
    fn retry_recovers_from_a_transient_failure() {
        let t = Scripted::new(vec![
            Err(TransportError::Status(503, "busy".into())),
            Ok(r#"{"choices":[{"text":"ok."}]}"#.into()),
        ]);
        let s = RemoteSummarizer::new(quick(), "k", t.clone()).unwrap();
        assert_eq!(run(&s, 20).unwrap().text, "ok.");
        assert_eq!(t.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn auth_failure_is_a_config_error() {
        let t = Scripted::new(vec![Err(TransportError::Status(401, "".into()))]);
        let s = RemoteSummarizer::new(quick(), "k", t.clone()).unwrap();
        assert!(matches!(run(&s, 20), Err(AoiError::Config(_))));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn degraded_flag_reaches_the_compressed_entry() {
        let s = RemoteSummarizer::new(quick(), "k", Scripted::new(vec![])).unwrap();
        let c = Compressor::new(CompressionConfig::default(), Arc::new(s));
        let out = c.compress_text(LOG).unwrap();
        assert!(out.degraded);
    }

    #[test]
    fn truncation_keeps_whole_lines_first() {
        assert_eq!(truncate_to_budget("a b\nc d e\nf", 4), ("a b\nc d".into(), true));
        assert_eq!(truncate_to_budget("a b\nc", 3), ("a b\nc".into(), false));
    }
}
