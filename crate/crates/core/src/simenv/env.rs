use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AoiError, Result};
use crate::model::{state_distance, ComponentId, ComponentState, FaultKind, Health, SystemState, BASELINE};
use crate::safety::{Classification, Command, SafetyPolicy};

use super::catalog::{
    command_duration, CommandCatalog, DiagOutcome, GLOBALLY_HARMFUL_VERBS, PROPAGATION, STATUS_DURATION,
    STATUS_TEMPLATE,
};
use super::logs;
use super::scenario::{InjectedFault, ScenarioSpec, Topology};

/// Gauge noise amplitude on mutating effects.
pub const NOISE: f64 = 0.02;
/// Amount a harmful command worsens each touched gauge.
pub const HARM: f64 = 0.15;
/// Deviation above which monitoring reports a component as degraded.
pub const ANOMALY_THRESHOLD: f64 = 0.05;
/// Distance to target under which a run counts as resolved.
pub const RESOLVED_DISTANCE: f64 = 0.05;
/// Lines in one diagnostic output.
pub const DIAG_LINES: std::ops::RangeInclusive<usize> = 40..=400;

/// What a diagnostic revealed, in catalog terms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    pub component: ComponentId,
    pub diagnostic: usize,
    pub outcome: DiagOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub text: String,
    pub error: bool,
    /// The command made things worse (harmful for the live fault).
    pub critical: bool,
    pub logs: Vec<String>,
    pub duration: f64,
    pub evidence: Option<Evidence>,
}

/// The surface agents use to act on (simulated) infrastructure.
pub trait Environment {
    fn now(&self) -> f64;
    fn step(&mut self, cmd: &Command) -> Result<StepOutcome>;
    /// Ground-truth copy.
    fn snapshot(&self) -> Result<SystemState>;
    /// Replaces ground truth; the clock keeps running forward.
    fn restore(&mut self, state: &SystemState) -> Result<()>;
    fn advance_clock(&mut self, duration: f64);
    fn catalog(&self) -> &CommandCatalog;
    fn topology(&self) -> &Topology;
    /// Monitoring view: gauges only, faults hidden.
    fn observe(&self) -> SystemState;
    /// Ground-truth changes made by the clock itself (fault injections and
    /// escalations) so far.
    fn clock_events(&self) -> u64;
}

/// Deterministic simulated infrastructure for one scenario run.
#[derive(Debug, Clone)]
pub struct SimEnv {
    spec: ScenarioSpec,
    catalog: CommandCatalog,
    policy: SafetyPolicy,
    state: SystemState,
    pending: Vec<InjectedFault>,
    injected_at: BTreeMap<ComponentId, f64>,
    escalated: BTreeSet<ComponentId>,
    seed: u64,
    occurrences: BTreeMap<String, u64>,
    digest: Sha256,
    lines: u64,
    steps: u64,
    clock_events: u64,
}

fn hash_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl SimEnv {
    /// Loads a scenario; `run_seed` is mixed with the scenario's own seed.
    pub fn load(spec: &ScenarioSpec, run_seed: u64) -> Result<Self> {
        let catalog = CommandCatalog::default();
        spec.validate(&catalog)?;
        let mut pending = spec.injected_faults.clone();
        pending.sort_by(|a, b| a.at.total_cmp(&b.at));
        let state = SystemState::healthy(spec.topology.components.iter().cloned());
        let mut env = SimEnv {
            spec: spec.clone(),
            catalog,
            policy: SafetyPolicy::default(),
            state,
            pending,
            injected_at: BTreeMap::new(),
            escalated: BTreeSet::new(),
            seed: hash_seed(&[&spec.seed.to_le_bytes(), &run_seed.to_le_bytes()]),
            occurrences: BTreeMap::new(),
            digest: Sha256::new(),
            lines: 0,
            steps: 0,
            clock_events: 0,
        };
        env.apply_due();
        Ok(env)
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    /// A fault outlived its deadline; automated recovery is no longer possible.
    pub fn escalated(&self) -> bool {
        !self.escalated.is_empty()
    }

    /// Faults scheduled but not yet injected.
    pub fn pending_injections(&self) -> usize {
        self.pending.len()
    }

    pub fn resolved(&self) -> bool {
        self.pending.is_empty()
            && !self.state.has_active_faults()
            && state_distance(&self.state, &self.state.target()).unwrap_or(f64::INFINITY) < RESOLVED_DISTANCE
    }

    pub fn distance_to_target(&self) -> f64 {
        state_distance(&self.state, &self.state.target()).expect("own target matches")
    }

    /// Digest of every log line emitted so far.
    pub fn log_digest(&self) -> String {
        self.digest.clone().finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn log_lines(&self) -> u64 {
        self.lines
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Stream for one (component, command) pair; the n-th issue of the
    /// same command draws the same numbers whatever else happened, so
    /// configurations that differ in their choices still share outcomes.
    fn rng_for(&mut self, key: &str) -> ChaCha8Rng {
        let n = self.occurrences.entry(key.to_string()).or_insert(0);
        let seed = hash_seed(&[&self.seed.to_le_bytes(), key.as_bytes(), &n.to_le_bytes()]);
        *n += 1;
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn emit(&mut self, lines: &[String]) {
        for l in lines {
            self.digest.update(l.as_bytes());
            self.digest.update(b"\n");
        }
        self.lines += lines.len() as u64;
    }

    fn propagation_count(&self, c: &ComponentId) -> usize {
        self.spec
            .topology
            .upstream(c)
            .filter(|u| self.state.component(u).is_some_and(|s| !s.active_faults.is_empty()))
            .count()
    }

    fn refresh_health(&mut self) {
        let escalated = self.escalated.clone();
        for comp in &mut self.state.components {
            let fails = comp.active_faults.iter().any(|f| self.catalog.fault(*f).fails);
            comp.health = if !comp.active_faults.is_empty() && (fails || escalated.contains(&comp.component_id)) {
                Health::Failed
            } else if !comp.active_faults.is_empty() || comp.deviation() > ANOMALY_THRESHOLD {
                Health::Degraded
            } else {
                Health::Healthy
            };
        }
    }

    fn shift(comp: &mut ComponentState, gauge: usize, delta: f64) {
        let v = &mut comp.state_vector[gauge];
        *v = (*v + delta).clamp(0.0, 1.0);
    }

    fn inject(&mut self, f: &InjectedFault) {
        let spec = self.catalog.fault(f.fault).clone();
        let Some(comp) = self.state.component_mut(&f.component) else { return };
        if !comp.active_faults.is_empty() {
            return;
        }
        for (g, o) in spec.offsets {
            Self::shift(comp, *g, *o);
        }
        comp.active_faults.insert(f.fault);
        self.clock_events += 1;
        self.injected_at.insert(f.component.clone(), f.at);
        let deps: Vec<ComponentId> = self.spec.topology.dependents(&f.component).cloned().collect();
        for d in deps {
            let dc = self.state.component_mut(&d).expect("topology component");
            for (g, o) in PROPAGATION {
                Self::shift(dc, g, o);
            }
        }
        let line = logs::line(f.at, f.component.as_str(), "WARN", "monitoring alert: gauges outside normal range");
        self.emit(&[line]);
    }

    fn apply_due(&mut self) {
        let now = self.state.time;
        while self.pending.first().is_some_and(|f| f.at <= now) {
            let f = self.pending.remove(0);
            self.inject(&f);
        }
        let mut newly = Vec::new();
        for comp in &self.state.components {
            for f in &comp.active_faults {
                let at = self.injected_at.get(&comp.component_id).copied().unwrap_or(0.0);
                if now >= at + self.catalog.fault(*f).escalate_after && !self.escalated.contains(&comp.component_id) {
                    newly.push(comp.component_id.clone());
                }
            }
        }
        for c in newly {
            let line = logs::line(now, c.as_str(), "ERROR", "incident escalated: automated remediation window exceeded");
            self.emit(&[line]);
            self.clock_events += 1;
            self.escalated.insert(c);
        }
        self.refresh_health();
    }

    fn target_component(&self, cmd: &Command) -> Option<ComponentId> {
        cmd.arguments.iter().find_map(|a| {
            let bare = a.trim_matches(|ch| ch == '\'' || ch == '"');
            let id = ComponentId::from(bare);
            self.spec.topology.contains(&id).then_some(id)
        })
    }

    fn read(&mut self, cmd: &Command, comp: &ComponentId, canonical: &str) -> StepOutcome {
        let now = self.state.time;
        if canonical == Command::parse(&STATUS_TEMPLATE.replace("{c}", comp.as_str())).canonical() {
            let c = self.state.component(comp).expect("known component");
            let v = &c.state_vector;
            let text = format!(
                "status {comp} cpu={:.3} memory={:.3} latency={:.3} error-rate={:.3} availability={:.3}",
                v[0], v[1], v[2], v[3], v[4]
            );
            let line = logs::line(now, comp.as_str(), "INFO", &text);
            return StepOutcome {
                text: line.clone(),
                error: false,
                critical: false,
                logs: vec![line],
                duration: STATUS_DURATION,
                evidence: None,
            };
        }
        let diag_index = self
            .catalog
            .diagnostics()
            .iter()
            .position(|d| Command::parse(&d.render(comp.as_str())).canonical() == canonical);
        let Some(di) = diag_index else {
            let line = logs::line(now, comp.as_str(), "WARN", &format!("unsupported query: {}", cmd.raw_text));
            return StepOutcome {
                text: line.clone(),
                error: true,
                critical: false,
                logs: vec![line],
                duration: 2.0,
                evidence: None,
            };
        };
        let diag = self.catalog.diagnostics()[di].clone();
        let actual: Option<FaultKind> =
            self.state.component(comp).and_then(|c| c.active_faults.iter().next().copied());
        let p = self.catalog.p_positive(di, actual);
        let mut rng = self.rng_for(&format!("{comp}|{canonical}"));
        let outcome = if rng.random::<f64>() < p { DiagOutcome::Positive } else { DiagOutcome::Negative };
        let signature = diag.detects.first().map(|k| self.catalog.fault(*k).signature).unwrap_or("");
        let n_lines: usize = rng.random_range(DIAG_LINES);
        let at = rng.random_range(0..n_lines);
        let mut lines = Vec::with_capacity(n_lines);
        for i in 0..n_lines {
            let t = now + diag.duration * i as f64 / n_lines as f64;
            if i == at {
                let text = logs::verdict_text(&diag, outcome, signature, comp.as_str());
                let (sev, text) = if outcome == DiagOutcome::Positive {
                    let tags = logs::verdict_tags(&diag, signature);
                    let planted: Vec<&String> = tags.iter().filter(|t| self.spec.critical_markers.contains(*t)).collect();
                    ("ERROR", logs::mark(&text, &planted))
                } else {
                    ("INFO", text)
                };
                lines.push(logs::line(t, comp.as_str(), sev, &text));
            } else {
                lines.push(logs::noise_line(t, comp.as_str(), &mut rng));
            }
        }
        StepOutcome {
            text: lines.join("\n"),
            error: false,
            critical: false,
            logs: lines,
            duration: diag.duration,
            evidence: Some(Evidence { component: comp.clone(), diagnostic: di, outcome }),
        }
    }

    fn worsen(&mut self, comp: &ComponentId, fault: Option<FaultKind>) {
        let offsets: Vec<(usize, f64)> = match fault {
            Some(f) => self.catalog.fault(f).offsets.to_vec(),
            None => PROPAGATION.to_vec(),
        };
        let c = self.state.component_mut(comp).expect("known component");
        for (g, o) in offsets {
            Self::shift(c, g, HARM * o.signum());
        }
    }

    fn noise(&mut self, key: &str) -> f64 {
        let mut rng = self.rng_for(key);
        rng.random_range(-NOISE..=NOISE)
    }

    /// One remediation step for the live fault on `comp`.
    fn remediate(&mut self, comp: &ComponentId, fault: FaultKind, step: usize, key: &str) -> String {
        let spec = self.catalog.fault(fault).clone();
        let k = spec.remediation.len() as f64;
        let prop = self.propagation_count(comp) as f64;
        let baseline_with_prop = |g: usize| {
            BASELINE[g] + PROPAGATION.iter().filter(|(pg, _)| *pg == g).map(|(_, o)| o * prop).sum::<f64>()
        };
        let noise = self.noise(key);
        let primary = spec.primary_gauge();
        let c = self.state.component(comp).expect("known component").clone();
        let ready = spec.offsets.iter().all(|(g, o)| {
            (c.state_vector[*g] - baseline_with_prop(*g)).abs() <= o.abs() / k + 0.06
        });
        let last = step + 1 == spec.remediation.len();
        if last && ready {
            let c = self.state.component_mut(comp).expect("known component");
            for (g, _) in spec.offsets {
                c.state_vector[*g] = baseline_with_prop(*g).clamp(0.0, 1.0);
            }
            Self::shift(c, primary, noise);
            c.active_faults.clear();
            let deps: Vec<ComponentId> = self.spec.topology.dependents(comp).cloned().collect();
            for d in deps {
                let own_fault = self.state.component(&d).is_some_and(|s| !s.active_faults.is_empty());
                let remaining = self.propagation_count(&d) as f64;
                let dc = self.state.component_mut(&d).expect("topology component");
                for (g, o) in PROPAGATION {
                    if own_fault {
                        Self::shift(dc, g, -o);
                    } else {
                        dc.state_vector[g] = (BASELINE[g] + o * remaining).clamp(0.0, 1.0);
                    }
                }
            }
            format!("{fault} cleared on {comp}")
        } else {
            let c = self.state.component_mut(comp).expect("known component");
            for (g, o) in spec.offsets {
                let target = baseline_with_prop(*g);
                let v = c.state_vector[*g];
                let moved = if *o > 0.0 { (v - o / k).max(target) } else { (v - o / k).min(target) };
                c.state_vector[*g] = moved.clamp(0.0, 1.0);
            }
            Self::shift(c, primary, noise);
            format!("{fault} mitigation step applied on {comp}")
        }
    }

    fn mutate(&mut self, cmd: &Command, comp: &ComponentId, canonical: &str) -> StepOutcome {
        let now = self.state.time;
        let key = format!("{comp}|{canonical}");
        let duration = command_duration(&cmd.verb);
        let fault = self.state.component(comp).and_then(|c| c.active_faults.iter().next().copied());
        let live = fault.filter(|_| !self.escalated.contains(comp));
        let mut critical = false;
        let mut error = false;
        let text = if GLOBALLY_HARMFUL_VERBS.contains(&cmd.verb.as_str()) {
            self.worsen(comp, fault);
            critical = true;
            format!("destructive command damaged {comp}")
        } else if let Some(f) = live {
            let spec = self.catalog.fault(f).clone();
            if spec.harmful_for(comp.as_str()).iter().any(|h| Command::parse(h).canonical() == canonical) {
                self.worsen(comp, Some(f));
                critical = true;
                format!("{comp} worsened after {}", cmd.verb)
            } else if let Some(step) = spec
                .remediation_for(comp.as_str())
                .iter()
                .position(|s| Command::parse(s).canonical() == canonical)
            {
                self.remediate(comp, f, step, &key)
            } else if self.is_known(canonical, comp) {
                format!("applied on {comp}: no observable change")
            } else {
                error = true;
                format!("unrecognized command for {comp}")
            }
        } else if self.is_known(canonical, comp) {
            format!("applied on {comp}: no observable change")
        } else {
            error = true;
            format!("unrecognized command for {comp}")
        };
        self.refresh_health();
        let sev = if critical { "ERROR" } else if error { "WARN" } else { "INFO" };
        let lines = vec![
            logs::line(now, comp.as_str(), "INFO", &format!("executing {canonical}")),
            logs::line(now + duration, comp.as_str(), sev, &text),
        ];
        StepOutcome { text, error, critical, logs: lines, duration, evidence: None }
    }

    fn is_known(&self, canonical: &str, comp: &ComponentId) -> bool {
        self.catalog.faults().any(|f| {
            f.remediation_for(comp.as_str())
                .iter()
                .chain(f.harmful_for(comp.as_str()).iter())
                .any(|s| Command::parse(s).canonical() == canonical)
        })
    }
}

impl Environment for SimEnv {
    fn now(&self) -> f64 {
        self.state.time
    }

    fn step(&mut self, cmd: &Command) -> Result<StepOutcome> {
        self.steps += 1;
        let canonical = cmd.canonical();
        let read_only = self.policy.classify_verb(&cmd.verb) == Classification::ReadOnly;
        let outcome = match self.target_component(cmd) {
            None => {
                let line = logs::line(self.state.time, "-", "WARN", &format!("malformed command: {}", cmd.raw_text));
                StepOutcome { text: line.clone(), error: true, critical: false, logs: vec![line], duration: 1.0, evidence: None }
            }
            Some(comp) if read_only => {
                #[cfg(debug_assertions)]
                let before = self.state.clone();
                let out = self.read(cmd, &comp, &canonical);
                #[cfg(debug_assertions)]
                assert_eq!(before, self.state, "read-only command mutated ground truth");
                out
            }
            Some(comp) => self.mutate(cmd, &comp, &canonical),
        };
        self.emit(&outcome.logs);
        self.advance_clock(outcome.duration);
        Ok(outcome)
    }

    fn snapshot(&self) -> Result<SystemState> {
        Ok(self.state.clone())
    }

    fn restore(&mut self, state: &SystemState) -> Result<()> {
        let ids: Vec<&ComponentId> = state.component_ids().collect();
        let own: Vec<&ComponentId> = self.state.component_ids().collect();
        if ids != own {
            return Err(AoiError::Shape("snapshot comes from a different topology".into()));
        }
        state.check()?;
        self.state.components = state.components.clone();
        self.refresh_health();
        let line = logs::line(self.state.time, "-", "WARN", "state restored from checkpoint");
        self.emit(&[line]);
        Ok(())
    }

    fn advance_clock(&mut self, duration: f64) {
        if duration > 0.0 {
            self.state.time += duration;
            self.apply_due();
        }
    }

    fn catalog(&self) -> &CommandCatalog {
        &self.catalog
    }

    fn topology(&self) -> &Topology {
        &self.spec.topology
    }

    fn observe(&self) -> SystemState {
        let mut s = self.state.clone();
        for c in &mut s.components {
            c.active_faults.clear();
            c.health = if c.deviation() > ANOMALY_THRESHOLD { Health::Degraded } else { Health::Healthy };
        }
        s
    }

    fn clock_events(&self) -> u64 {
        self.clock_events
    }
}
