//! Log line synthesis. Every line has the form
//! `<logical-time> <component> <severity> <text>`.

use rand::Rng;

use crate::compressor::{tag_id, CriticalKind};

use super::catalog::{DiagOutcome, Diagnostic};

const RESOURCES: [&str; 6] = ["orders", "users", "items", "carts", "invoices", "search"];

/// Background templates with relative weights. A few carry threshold or
/// causal phrasing so that compression has to rank criticals, not just
/// find them.
const TEMPLATES: [(u32, &str, &str); 20] = [
    (14, "INFO", "request served path=/v1/{res} status=200 in {ms}ms"),
    (10, "INFO", "GET /v1/{res}/{id} 200 {bytes}B"),
    (8, "INFO", "heartbeat ok seq={n}"),
    (7, "DEBUG", "gc pause {ms}ms heap={mb}MB"),
    (6, "INFO", "worker {k} picked job {id}"),
    (6, "INFO", "job {id} completed in {ms}ms"),
    (5, "INFO", "cache hit ratio {pct}% over last {n}s"),
    (5, "INFO", "connection opened from 10.0.{k}.{n}"),
    (5, "INFO", "connection closed from 10.0.{k}.{n}"),
    (4, "DEBUG", "metrics flushed points={n}"),
    (4, "INFO", "user session {id} refreshed"),
    (4, "INFO", "queue depth {n} consumers={k}"),
    (3, "INFO", "health probe passed in {ms}ms"),
    (3, "INFO", "config checksum verified rev={n}"),
    (3, "DEBUG", "tls session resumed id={id}"),
    (3, "INFO", "batch of {n} events committed"),
    (2, "INFO", "replica lag {ms}ms within bounds"),
    (2, "INFO", "scheduled task sync-{k} started"),
    (1, "WARN", "retry {k}/3 for request {id} due to transient error"),
    (1, "WARN", "p99 latency > {ms}ms on /v1/{res}"),
];

fn fill<R: Rng>(template: &str, rng: &mut R) -> String {
    let mut out = String::with_capacity(template.len() + 16);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let close = open + rest[open..].find('}').expect("closed placeholder");
        let value = match &rest[open + 1..close] {
            "res" => RESOURCES[rng.random_range(0..RESOURCES.len())].to_string(),
            "ms" => rng.random_range(2..400u32).to_string(),
            "id" => format!("{:x}", rng.random_range(0x1000..0xffffu32)),
            "bytes" => rng.random_range(120..9000u32).to_string(),
            "n" => rng.random_range(1..500u32).to_string(),
            "k" => rng.random_range(1..9u32).to_string(),
            "mb" => rng.random_range(64..2048u32).to_string(),
            "pct" => rng.random_range(40..99u32).to_string(),
            other => panic!("unknown placeholder {other}"),
        };
        out.push_str(&value);
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

pub fn line(time: f64, component: &str, severity: &str, text: &str) -> String {
    format!("{time:.1} {component} {severity} {text}")
}

/// One background line.
pub fn noise_line<R: Rng>(time: f64, component: &str, rng: &mut R) -> String {
    let total: u32 = TEMPLATES.iter().map(|t| t.0).sum();
    let mut pick = rng.random_range(0..total);
    for (w, sev, tpl) in TEMPLATES {
        if pick < w {
            return line(time, component, sev, &fill(tpl, rng));
        }
        pick -= w;
    }
    unreachable!()
}

/// Text of a diagnostic verdict, without time/component/severity prefix.
pub fn verdict_text(diag: &Diagnostic, outcome: DiagOutcome, signature: &str, component: &str) -> String {
    match outcome {
        DiagOutcome::Positive => format!("{} {} on {}", diag.positive_code(), signature, component),
        DiagOutcome::Negative => format!("{} {} nominal on {}", diag.negative_code(), diag.name, component),
    }
}

/// Critical-marker tags for the spans of a positive verdict.
pub fn verdict_tags(diag: &Diagnostic, signature: &str) -> [String; 2] {
    [tag_id(CriticalKind::ErrorCode, &diag.positive_code()), tag_id(CriticalKind::FaultSignature, signature)]
}

/// Appends ` [CRIT:<tag>]` for every tag in `planted`.
pub fn mark(text: &str, planted: &[&String]) -> String {
    let mut s = text.to_string();
    for t in planted {
        s.push_str(" [CRIT:");
        s.push_str(t);
        s.push(']');
    }
    s
}

/// Tags embedded as `[CRIT:<tag>]` spans.
pub fn planted_tags(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(i) = rest.find("[CRIT:") {
        let after = &rest[i + 6..];
        match after.find(']') {
            Some(j) => {
                out.push(after[..j].to_string());
                rest = &after[j + 1..];
            }
            None => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compressor::RuleSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn line_format() {
        assert_eq!(line(12.25, "db", "INFO", "ok"), "12.2 db INFO ok");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let l = noise_line(3.0, "api", &mut rng);
            let parts: Vec<_> = l.splitn(4, ' ').collect();
            assert_eq!(parts.len(), 4);
            assert_eq!(parts[0], "3.0");
            assert!(!l.contains('{'));
        }
    }

    #[test]
    fn noise_never_carries_error_codes_or_signatures() {
        let rules = RuleSet::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let l = noise_line(1.0, "api", &mut rng);
            for item in rules.scan(&l, 0) {
                assert!(
                    matches!(item.kind, CriticalKind::ThresholdBreach | CriticalKind::CausalMarker),
                    "{l}"
                );
            }
        }
    }

    #[test]
    fn markers_round_trip() {
        let a = "aa".to_string();
        let b = "bb".to_string();
        let text = mark("x", &[&a, &b]);
        assert_eq!(text, "x [CRIT:aa] [CRIT:bb]");
        assert_eq!(planted_tags(&text), ["aa", "bb"]);
    }
}
