//! Command catalog: per fault kind, the symptom offsets, the diagnostic
//! command and its outcome likelihoods, the remediation sequence and the
//! commands that make things worse.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::{FaultKind, AVAILABILITY, CPU, ERROR_RATE, LATENCY, MEMORY};

/// A read-only command declared diagnostic for one or more fault kinds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub name: &'static str,
    /// Command text with `{c}` standing for the component id.
    pub template: &'static str,
    pub detects: &'static [FaultKind],
    /// Declared fraction of hypothesis uncertainty one run of this command
    /// is expected to remove.
    pub diagnosticity: f64,
    pub duration: f64,
    code: u16,
}

impl Diagnostic {
    pub fn render(&self, component: &str) -> String {
        self.template.replace("{c}", component)
    }

    pub fn positive_code(&self) -> String {
        format!("ERR-5{:03}", self.code)
    }

    pub fn negative_code(&self) -> String {
        format!("DIAG-2{:03}", self.code)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Faults in one family present near-identical symptoms.
    pub family: u8,
    /// Log phrase that identifies the fault; part of the fault lexicon.
    pub signature: &'static str,
    /// Gauge displacement from baseline while the fault is active.
    pub offsets: &'static [(usize, f64)],
    /// The component is down (not merely degraded) while the fault is active.
    pub fails: bool,
    pub diagnostic: usize,
    pub remediation: &'static [&'static str],
    pub harmful: &'static [&'static str],
    /// Seconds after injection at which an unremediated fault escalates
    /// beyond automated recovery.
    pub escalate_after: f64,
}

impl FaultSpec {
    pub fn remediation_for(&self, component: &str) -> Vec<String> {
        self.remediation.iter().map(|t| t.replace("{c}", component)).collect()
    }

    pub fn harmful_for(&self, component: &str) -> Vec<String> {
        self.harmful.iter().map(|t| t.replace("{c}", component)).collect()
    }

    pub fn touches(&self, gauge: usize) -> bool {
        self.offsets.iter().any(|(g, _)| *g == gauge)
    }

    /// The gauge with the largest displacement.
    pub fn primary_gauge(&self) -> usize {
        self.offsets
            .iter()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(g, _)| *g)
            .unwrap_or(LATENCY)
    }

    pub fn offset(&self, gauge: usize) -> f64 {
        self.offsets.iter().find(|(g, _)| *g == gauge).map_or(0.0, |(_, o)| *o)
    }
}

/// Probability of a positive diagnostic outcome under each hypothesis class.
pub const P_POSITIVE_TRUE: f64 = 0.9;
pub const P_POSITIVE_FAMILY: f64 = 0.25;
pub const P_POSITIVE_OTHER: f64 = 0.08;
pub const P_POSITIVE_NO_FAULT: f64 = 0.05;

/// Displacement added to a direct dependent of a faulty component.
pub const PROPAGATION: [(usize, f64); 2] = [(LATENCY, 0.12), (ERROR_RATE, 0.08)];

/// Read-only status query used for state refresh.
pub const STATUS_TEMPLATE: &str = "GET /status {c}";
pub const STATUS_DURATION: f64 = 5.0;

const DIAGNOSTICS: [Diagnostic; 11] = [
    Diagnostic { name: "crash-log", template: "READ /var/log/crash {c}", detects: &[FaultKind::ProcessCrash], diagnosticity: 0.75, duration: 150.0, code: 101 },
    Diagnostic { name: "pool-stats", template: "SHOW pool-stats {c}", detects: &[FaultKind::DbConnExhausted], diagnosticity: 0.8, duration: 120.0, code: 102 },
    Diagnostic { name: "dependency-map", template: "GET /deps {c}", detects: &[FaultKind::DependencyTimeout], diagnosticity: 0.7, duration: 210.0, code: 103 },
    Diagnostic { name: "top-processes", template: "SHOW top-processes {c}", detects: &[FaultKind::CpuSaturation], diagnosticity: 0.7, duration: 150.0, code: 104 },
    Diagnostic { name: "heap-profile", template: "GET /debug/heap {c}", detects: &[FaultKind::MemoryLeak], diagnosticity: 0.75, duration: 270.0, code: 105 },
    Diagnostic { name: "slow-log", template: "SELECT * FROM slow_log WHERE host = '{c}'", detects: &[FaultKind::SlowQuery], diagnosticity: 0.8, duration: 180.0, code: 106 },
    Diagnostic { name: "config-audit", template: "DESCRIBE config {c}", detects: &[FaultKind::BadConfigPush, FaultKind::FeatureFlagDrift], diagnosticity: 0.6, duration: 120.0, code: 107 },
    Diagnostic { name: "cert-check", template: "READ /etc/tls/cert.pem {c}", detects: &[FaultKind::CertificateExpired], diagnosticity: 0.8, duration: 120.0, code: 108 },
    Diagnostic { name: "key-audit", template: "LIST access-keys {c}", detects: &[FaultKind::CredentialLeak], diagnosticity: 0.7, duration: 180.0, code: 109 },
    Diagnostic { name: "traffic-sources", template: "SHOW traffic-sources {c}", detects: &[FaultKind::DdosTraffic], diagnosticity: 0.75, duration: 150.0, code: 110 },
    Diagnostic { name: "session-audit", template: "LIST sessions {c}", detects: &[FaultKind::UnauthorizedAccess], diagnosticity: 0.7, duration: 180.0, code: 111 },
];

const FAULTS: [FaultSpec; 12] = [
    FaultSpec {
        kind: FaultKind::ProcessCrash,
        family: 1,
        signature: "process exited unexpectedly",
        offsets: &[(AVAILABILITY, -0.75), (ERROR_RATE, 0.6)],
        fails: true,
        diagnostic: 0,
        remediation: &["CLEAR crash-lock {c}", "RESTART service {c}"],
        harmful: &["ROLLBACK config {c}"],
        escalate_after: 1200.0,
    },
    FaultSpec {
        kind: FaultKind::DbConnExhausted,
        family: 0,
        signature: "connection pool exhausted",
        offsets: &[(LATENCY, 0.45), (ERROR_RATE, 0.35)],
        fails: false,
        diagnostic: 1,
        remediation: &["KILL idle-connections {c}", "UPDATE pool-size {c} 200", "RESTART pool {c}"],
        harmful: &["SCALE replicas {c} +2", "SCALE replicas {c} +4", "RESTART service {c}"],
        escalate_after: 1500.0,
    },
    FaultSpec {
        kind: FaultKind::DependencyTimeout,
        family: 0,
        signature: "upstream request timed out",
        offsets: &[(LATENCY, 0.5), (ERROR_RATE, 0.25)],
        fails: false,
        diagnostic: 2,
        remediation: &["RESET circuit-breaker {c}", "RELOAD upstream-routes {c}"],
        harmful: &[],
        escalate_after: 1500.0,
    },
    FaultSpec {
        kind: FaultKind::CpuSaturation,
        family: 2,
        signature: "cpu throttling engaged",
        offsets: &[(CPU, 0.6), (LATENCY, 0.3)],
        fails: false,
        diagnostic: 3,
        remediation: &["KILL runaway-process {c}", "SCALE replicas {c} +2"],
        harmful: &[],
        escalate_after: 1500.0,
    },
    FaultSpec {
        kind: FaultKind::MemoryLeak,
        family: 3,
        signature: "out of memory",
        offsets: &[(MEMORY, 0.5), (LATENCY, 0.15)],
        fails: false,
        diagnostic: 4,
        remediation: &["RESTART service {c}", "PATCH memory-limit {c}"],
        harmful: &["SCALE replicas {c} +2"],
        escalate_after: 1800.0,
    },
    FaultSpec {
        kind: FaultKind::SlowQuery,
        family: 0,
        signature: "slow query detected",
        offsets: &[(LATENCY, 0.5), (CPU, 0.15), (ERROR_RATE, 0.1)],
        fails: false,
        diagnostic: 5,
        remediation: &["KILL long-query {c}", "ALTER index {c}"],
        harmful: &["RESTART pool {c}"],
        escalate_after: 1800.0,
    },
    FaultSpec {
        kind: FaultKind::BadConfigPush,
        family: 1,
        signature: "invalid configuration rejected",
        offsets: &[(AVAILABILITY, -0.35), (ERROR_RATE, 0.5)],
        fails: false,
        diagnostic: 6,
        remediation: &["ROLLBACK config {c}", "RELOAD service {c}"],
        harmful: &[],
        escalate_after: 1500.0,
    },
    FaultSpec {
        kind: FaultKind::CertificateExpired,
        family: 1,
        signature: "certificate has expired",
        offsets: &[(AVAILABILITY, -0.5), (ERROR_RATE, 0.6)],
        fails: true,
        diagnostic: 7,
        remediation: &["ROTATE certificate {c}", "RELOAD service {c}"],
        harmful: &["ROLLBACK config {c}"],
        escalate_after: 1200.0,
    },
    FaultSpec {
        kind: FaultKind::FeatureFlagDrift,
        family: 0,
        signature: "feature flag mismatch",
        offsets: &[(LATENCY, 0.3), (ERROR_RATE, 0.35)],
        fails: false,
        diagnostic: 6,
        remediation: &["UPDATE feature-flags {c} baseline"],
        harmful: &["RELOAD service {c}"],
        escalate_after: 1800.0,
    },
    FaultSpec {
        kind: FaultKind::CredentialLeak,
        family: 2,
        signature: "leaked credential in use",
        offsets: &[(CPU, 0.4), (ERROR_RATE, 0.15), (LATENCY, 0.1)],
        fails: false,
        diagnostic: 8,
        remediation: &["REVOKE access-keys {c}", "ROTATE credentials {c}"],
        harmful: &["SCALE replicas {c} +4"],
        escalate_after: 1200.0,
    },
    FaultSpec {
        kind: FaultKind::DdosTraffic,
        family: 2,
        signature: "request flood detected",
        offsets: &[(CPU, 0.5), (LATENCY, 0.35), (AVAILABILITY, -0.15)],
        fails: false,
        diagnostic: 9,
        remediation: &["BLOCK source-range {c}", "SCALE replicas {c} +4"],
        harmful: &["RESTART service {c}"],
        escalate_after: 1200.0,
    },
    FaultSpec {
        kind: FaultKind::UnauthorizedAccess,
        family: 3,
        signature: "unauthorized access attempt",
        offsets: &[(MEMORY, 0.35), (ERROR_RATE, 0.2)],
        fails: false,
        diagnostic: 10,
        remediation: &["REVOKE sessions {c}", "UPDATE firewall {c}"],
        harmful: &["RESTART service {c}"],
        escalate_after: 1500.0,
    },
];

/// Verbs that are harmful on any component.
pub const GLOBALLY_HARMFUL_VERBS: [&str; 2] = ["DROP", "TRUNCATE"];

/// Phrases that identify fault signatures in logs.
pub fn fault_lexicon() -> &'static [&'static str] {
    const LEXICON: [&str; 12] = [
        "process exited unexpectedly",
        "connection pool exhausted",
        "upstream request timed out",
        "cpu throttling engaged",
        "out of memory",
        "slow query detected",
        "invalid configuration rejected",
        "certificate has expired",
        "feature flag mismatch",
        "leaked credential in use",
        "request flood detected",
        "unauthorized access attempt",
    ];
    &LEXICON
}

/// Seconds a mutating command takes, by verb.
pub fn command_duration(verb: &str) -> f64 {
    match verb {
        "RESTART" => 90.0,
        "KILL" | "REVOKE" | "BLOCK" => 30.0,
        "SCALE" | "ROLLBACK" | "PATCH" => 60.0,
        "UPDATE" => 45.0,
        "RELOAD" => 40.0,
        "ROTATE" => 75.0,
        "ALTER" => 120.0,
        "RESET" => 20.0,
        "CLEAR" => 15.0,
        _ => 10.0,
    }
}

/// Outcome of one diagnostic run, as declared by the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
pub enum DiagOutcome {
    Positive,
    Negative,
}

#[derive(Debug, Clone)]
pub struct CommandCatalog {
    faults: BTreeMap<FaultKind, FaultSpec>,
    diagnostics: Vec<Diagnostic>,
}

impl Default for CommandCatalog {
    fn default() -> Self {
        CommandCatalog {
            faults: FAULTS.iter().map(|f| (f.kind, f.clone())).collect(),
            diagnostics: DIAGNOSTICS.to_vec(),
        }
    }
}

impl CommandCatalog {
    pub fn fault(&self, kind: FaultKind) -> &FaultSpec {
        &self.faults[&kind]
    }

    pub fn faults(&self) -> impl Iterator<Item = &FaultSpec> {
        self.faults.values()
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn diagnostic_for(&self, kind: FaultKind) -> &Diagnostic {
        &self.diagnostics[self.fault(kind).diagnostic]
    }

    pub fn diagnostic_index(&self, kind: FaultKind) -> usize {
        self.fault(kind).diagnostic
    }

    /// Finds the diagnostic whose rendered text for `component` equals `text`.
    pub fn match_diagnostic(&self, text: &str, component: &str) -> Option<usize> {
        self.diagnostics.iter().position(|d| d.render(component) == text)
    }

    /// Maps a verdict code back to its diagnostic and outcome.
    pub fn decode(&self, code: &str) -> Option<(usize, DiagOutcome)> {
        self.diagnostics.iter().enumerate().find_map(|(i, d)| {
            if d.positive_code() == code {
                Some((i, DiagOutcome::Positive))
            } else if d.negative_code() == code {
                Some((i, DiagOutcome::Negative))
            } else {
                None
            }
        })
    }

    /// P(positive | hypothesis) for diagnostic `diag` run on the component
    /// the hypothesis is about. `None` is the no-fault hypothesis.
    pub fn p_positive(&self, diag: usize, hypothesis: Option<FaultKind>) -> f64 {
        let d = &self.diagnostics[diag];
        match hypothesis {
            None => P_POSITIVE_NO_FAULT,
            Some(k) if d.detects.contains(&k) => P_POSITIVE_TRUE,
            Some(k) if d.detects.iter().any(|t| self.fault(*t).family == self.fault(k).family) => {
                P_POSITIVE_FAMILY
            }
            Some(_) => P_POSITIVE_OTHER,
        }
    }

    pub fn likelihood(&self, diag: usize, outcome: DiagOutcome, hypothesis: Option<FaultKind>) -> f64 {
        let p = self.p_positive(diag, hypothesis);
        match outcome {
            DiagOutcome::Positive => p,
            DiagOutcome::Negative => 1.0 - p,
        }
    }

    /// True when `text` is one of `kind`'s remediation steps on `component`.
    pub fn remediation_step(&self, kind: FaultKind, text: &str, component: &str) -> Option<usize> {
        self.fault(kind).remediation_for(component).iter().position(|s| s == text)
    }

    /// True when `text` appears in any fault's remediation for `component`.
    pub fn is_known_remediation(&self, text: &str, component: &str) -> bool {
        self.faults.values().any(|f| f.remediation_for(component).iter().any(|s| s == text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Category;
    use crate::safety::{tokenize_script, validate_script, PolicyKind};

    #[test]
    fn every_category_has_three_kinds() {
        let cat = CommandCatalog::default();
        for c in Category::ALL {
            assert!(cat.faults().filter(|f| f.kind.category() == c).count() >= 3);
        }
        assert_eq!(cat.faults().count(), 12);
    }

    #[test]
    fn likelihood_rows_are_probabilities() {
        let cat = CommandCatalog::default();
        for d in 0..cat.diagnostics().len() {
            for h in std::iter::once(None).chain(FaultKind::ALL.into_iter().map(Some)) {
                let pos = cat.likelihood(d, DiagOutcome::Positive, h);
                let neg = cat.likelihood(d, DiagOutcome::Negative, h);
                assert!((0.0..=1.0).contains(&pos));
                assert!((pos + neg - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagnostics_are_read_only_and_remediations_pass_executor_policy() {
        let cat = CommandCatalog::default();
        for d in cat.diagnostics() {
            let cmds = tokenize_script(&d.render("db")).unwrap();
            assert_eq!(cmds.len(), 1);
            assert!(validate_script(&cmds, PolicyKind::ProbePolicy).safe, "{}", d.template);
        }
        for f in cat.faults() {
            let cmds = tokenize_script(&f.remediation_for("db").join("\n")).unwrap();
            assert!(validate_script(&cmds, PolicyKind::ExecutorPolicy).safe);
            for h in f.harmful_for("db") {
                assert!(!f.remediation_for("db").contains(&h));
            }
        }
    }

    #[test]
    fn codes_decode() {
        let cat = CommandCatalog::default();
        let d = cat.diagnostic_for(FaultKind::DbConnExhausted);
        assert_eq!(cat.decode(&d.positive_code()), Some((1, DiagOutcome::Positive)));
        assert_eq!(cat.decode(&d.negative_code()), Some((1, DiagOutcome::Negative)));
        assert_eq!(cat.decode("ERR-9999"), None);
    }

    #[test]
    fn shared_diagnostic() {
        let cat = CommandCatalog::default();
        assert_eq!(
            cat.diagnostic_for(FaultKind::BadConfigPush).template,
            cat.diagnostic_for(FaultKind::FeatureFlagDrift).template
        );
    }
}
