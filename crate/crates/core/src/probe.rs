//! The Probe agent: read-only information gathering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AoiError, Result};
use crate::memory::{EntryId, MemoryStore, RawContextEntry, Source};
use crate::model::{ComponentId, Task, TaskId, TaskKind};
use crate::observer::{FaultBelief, HYPOTHESIS_THRESHOLD};
use crate::safety::{Command, PolicyKind, SafetyPolicy};
use crate::simenv::catalog::STATUS_TEMPLATE;
use crate::simenv::env::{Environment, Evidence};
use crate::simenv::logs::planted_tags;

/// Default cap on commands per probe script.
pub const MAX_PROBE_COMMANDS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub command: Command,
    pub text: String,
    pub error: bool,
    /// What the simulator declares the command revealed.
    pub evidence: Option<Evidence>,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task_id: TaskId,
    pub observations: Vec<Observation>,
    pub raw_entry_ids: Vec<EntryId>,
    /// Entropy reduction credited by the observer after its update.
    pub information_gain: f64,
}

#[derive(Debug, Clone)]
pub struct ProbeAgent {
    pub policy: SafetyPolicy,
    pub threshold: f64,
    pub max_commands: usize,
}

impl Default for ProbeAgent {
    fn default() -> Self {
        ProbeAgent { policy: SafetyPolicy::default(), threshold: HYPOTHESIS_THRESHOLD, max_commands: MAX_PROBE_COMMANDS }
    }
}

impl ProbeAgent {
    /// Catalog-driven script: the diagnostic of every live hypothesis on
    /// the task's targets (restricted to the task's suspects when it names
    /// any), highest posterior first, de-duplicated, capped.
    pub fn generate_probe_script(
        &self,
        task: &Task,
        beliefs: &BTreeMap<ComponentId, FaultBelief>,
        catalog: &crate::simenv::CommandCatalog,
    ) -> Result<Vec<Command>> {
        if task.kind != TaskKind::Probe {
            return Err(AoiError::Contract(format!("task {} is not a probe task", task.task_id)));
        }
        if task.target_components.is_empty() {
            return Err(AoiError::EmptyScript(format!("task {} has no target components", task.task_id)));
        }
        let mut ranked: Vec<(f64, &ComponentId, crate::model::FaultKind)> = Vec::new();
        for c in &task.target_components {
            let Some(b) = beliefs.get(c) else { continue };
            for (h, p) in b.iter() {
                let Some(k) = h.fault else { continue };
                if h.component != *c || p < self.threshold {
                    continue;
                }
                if !task.suspects.is_empty() && !task.suspects.contains(&(c.clone(), k)) {
                    continue;
                }
                ranked.push((p, c, k));
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
        let mut script: Vec<Command> = Vec::new();
        for (_, c, k) in ranked {
            let text = catalog.diagnostic_for(k).render(c.as_str());
            if script.iter().all(|s| s.raw_text != text) {
                script.push(self.policy.tokenize_script(&text)?.remove(0));
            }
            if script.len() == self.max_commands {
                break;
            }
        }
        Ok(script)
    }

    /// Validates the whole script, then runs it with error-continue
    /// semantics, storing each observation as a raw entry. Ground truth is
    /// compared around every command that saw no clock-driven change; any
    /// difference is a fatal error.
    pub fn run_script(
        &self,
        task_id: &TaskId,
        script: &[Command],
        env: &mut dyn Environment,
        memory: &mut MemoryStore,
    ) -> Result<ProbeResult> {
        let verdict = self.policy.validate_script(script, PolicyKind::ProbePolicy);
        if !verdict.safe {
            let detail: Vec<String> =
                verdict.violations.iter().map(|v| format!("#{} {} ({})", v.index, v.verb, v.reason)).collect();
            return Err(AoiError::UnsafeScript(detail.join(", ")));
        }
        let mut observations = Vec::with_capacity(script.len());
        let mut raw_entry_ids = Vec::with_capacity(script.len());
        for cmd in script {
            let at = env.now();
            let before = env.snapshot()?;
            let clock_before = env.clock_events();
            let (text, error, evidence) = match env.step(cmd) {
                Ok(out) => (out.text, out.error, out.evidence),
                Err(e) => (format!("command failed: {e}"), true, None),
            };
            if env.clock_events() == clock_before && !before.same_ground_truth(&env.snapshot()?) {
                return Err(AoiError::Fatal(format!("probe {task_id} changed ground truth with `{}`", cmd.raw_text)));
            }
            let id = memory.next_entry_id();
            let entry = RawContextEntry::new(id, env.now(), Source::Probe, text.clone()).with_tags(planted_tags(&text));
            raw_entry_ids.push(memory.put_raw(entry)?);
            observations.push(Observation { command: cmd.clone(), text, error, evidence, at });
        }
        Ok(ProbeResult { task_id: task_id.clone(), observations, raw_entry_ids, information_gain: 0.0 })
    }

    /// Script generation followed by execution.
    pub fn run_probe(
        &self,
        task: &Task,
        beliefs: &BTreeMap<ComponentId, FaultBelief>,
        env: &mut dyn Environment,
        memory: &mut MemoryStore,
    ) -> Result<ProbeResult> {
        let script = self.generate_probe_script(task, beliefs, env.catalog())?;
        if script.is_empty() {
            return Err(AoiError::EmptyScript(format!("no live hypothesis for task {}", task.task_id)));
        }
        self.run_script(&task.task_id, &script, env, memory)
    }

    /// Current gauges of `component`, read through the status query.
    pub fn query_state(
        &self,
        component: &ComponentId,
        env: &mut dyn Environment,
        memory: &mut MemoryStore,
    ) -> Result<Option<Vec<f64>>> {
        let cmd = self.policy.tokenize_script(&STATUS_TEMPLATE.replace("{c}", component.as_str()))?;
        let result = self.run_script(&TaskId(format!("refresh-{component}")), &cmd, env, memory)?;
        Ok(result.observations.first().and_then(|o| parse_status(&o.text)))
    }
}

/// Gauge values from a status line (`cpu=0.300 memory=...`).
pub fn parse_status(text: &str) -> Option<Vec<f64>> {
    let values: Vec<f64> = crate::model::GAUGE_NAMES
        .iter()
        .map(|g| {
            let key = format!("{g}=");
            let start = text.find(&key)? + key.len();
            text[start..].split_whitespace().next()?.parse().ok()
        })
        .collect::<Option<_>>()?;
    Some(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FaultKind;
    use crate::observer::Hypothesis;
    use crate::simenv::scenario::{InjectedFault, ScenarioSpec, Topology};
    use crate::simenv::{CommandCatalog, SimEnv};

    fn env() -> SimEnv {
        let spec = ScenarioSpec::build(
            "t",
            crate::model::Category::ServiceFailure,
            Topology::new(&["api", "db"], &[("api", "db")]),
            vec![InjectedFault { component: "db".into(), fault: FaultKind::DbConnExhausted, at: 0.0 }],
            1,
        );
        SimEnv::load(&spec, 0).unwrap()
    }

    fn belief(c: &str, entries: &[(FaultKind, f64)]) -> BTreeMap<ComponentId, FaultBelief> {
        let mut m: BTreeMap<Hypothesis, f64> =
            entries.iter().map(|(k, p)| (Hypothesis::new(c, Some(*k)), *p)).collect();
        m.insert(Hypothesis::new(c, None), 0.01);
        [(ComponentId::from(c), FaultBelief::new(m).unwrap())].into()
    }

    #[test]
    fn single_hypothesis_gives_its_diagnostic() {
        let catalog = CommandCatalog::default();
        let task = Task::new("p", TaskKind::Probe).with_targets(["db"]);
        let b = belief("db", &[(FaultKind::SlowQuery, 0.99)]);
        let script = ProbeAgent::default().generate_probe_script(&task, &b, &catalog).unwrap();
        assert_eq!(script.len(), 1);
        assert_eq!(script[0].raw_text, catalog.diagnostic_for(FaultKind::SlowQuery).render("db"));
    }

    #[test]
    fn shared_diagnostic_appears_once() {
        let catalog = CommandCatalog::default();
        let task = Task::new("p", TaskKind::Probe).with_targets(["db"]);
        let b = belief("db", &[(FaultKind::BadConfigPush, 0.5), (FaultKind::FeatureFlagDrift, 0.49)]);
        let script = ProbeAgent::default().generate_probe_script(&task, &b, &catalog).unwrap();
        assert_eq!(script.len(), 1);
    }

    #[test]
    fn script_is_cut_to_the_highest_posteriors() {
        let catalog = CommandCatalog::default();
        let comps = ["a", "b"];
        let mut beliefs = BTreeMap::new();
        let mut all = Vec::new();
        for (ci, c) in comps.iter().enumerate() {
            let mut m = BTreeMap::new();
            for (i, k) in FaultKind::ALL.iter().enumerate() {
                let w = 1.0 + (i * 2 + ci) as f64;
                m.insert(Hypothesis::new(*c, Some(*k)), w);
            }
            let b = FaultBelief::new(m).unwrap();
            for (h, p) in b.iter() {
                all.push((p, catalog.diagnostic_for(h.fault.unwrap()).render(c)));
            }
            beliefs.insert(ComponentId::from(*c), b);
        }
        let task = Task::new("p", TaskKind::Probe).with_targets(comps);
        let agent = ProbeAgent { threshold: 0.0, ..ProbeAgent::default() };
        let script = agent.generate_probe_script(&task, &beliefs, &catalog).unwrap();
        assert_eq!(script.len(), MAX_PROBE_COMMANDS);
        // Oracle: sort by posterior, keep first occurrences, cut at 16.
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut want: Vec<String> = Vec::new();
        for (_, t) in all {
            if !want.contains(&t) {
                want.push(t);
            }
        }
        want.truncate(MAX_PROBE_COMMANDS);
        let got: Vec<String> = script.iter().map(|c| c.raw_text.clone()).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn no_targets_is_an_empty_script_error() {
        let task = Task::new("p", TaskKind::Probe);
        let err = ProbeAgent::default().generate_probe_script(&task, &BTreeMap::new(), &CommandCatalog::default());
        assert!(matches!(err, Err(AoiError::EmptyScript(_))));
    }

    #[test]
    fn happy_path_stores_every_observation() {
        let mut env = env();
        let mut mem = MemoryStore::default();
        let script = SafetyPolicy::default().tokenize_script("SHOW pool-stats db\nGET /deps api").unwrap();
        let r = ProbeAgent::default().run_script(&"p".into(), &script, &mut env, &mut mem).unwrap();
        assert_eq!(r.observations.len(), 2);
        assert!(r.observations.iter().all(|o| !o.error));
        assert_eq!(r.raw_entry_ids.len(), 2);
        for (o, id) in r.observations.iter().zip(&r.raw_entry_ids) {
            assert_eq!(mem.get_raw(*id, env.now()).unwrap().text, o.text);
        }
    }

    #[test]
    fn unsafe_script_is_rejected_before_any_call() {
        let mut env = env();
        let mut mem = MemoryStore::default();
        let script = SafetyPolicy::default().tokenize_script("SHOW pool-stats db; DELETE FROM pool").unwrap();
        let err = ProbeAgent::default().run_script(&"p".into(), &script, &mut env, &mut mem).unwrap_err();
        assert!(matches!(err, AoiError::UnsafeScript(_)));
        assert_eq!(env.steps(), 0);
        assert_eq!(mem.live_count(), 0);
    }

    #[test]
    fn failing_command_does_not_stop_the_script() {
        let mut env = env();
        let mut mem = MemoryStore::default();
        let script =
            SafetyPolicy::default().tokenize_script("SHOW pool-stats db\nSHOW nothing db\nGET /deps db").unwrap();
        let r = ProbeAgent::default().run_script(&"p".into(), &script, &mut env, &mut mem).unwrap();
        let errors: Vec<bool> = r.observations.iter().map(|o| o.error).collect();
        assert_eq!(errors, [false, true, false]);
        assert_eq!(env.steps(), 3);
    }

    #[test]
    fn status_query_reads_gauges() {
        let mut env = env();
        let mut mem = MemoryStore::default();
        let v = ProbeAgent::default().query_state(&"db".into(), &mut env, &mut mem).unwrap().unwrap();
        let truth = env.snapshot().unwrap();
        let want = &truth.component(&"db".into()).unwrap().state_vector;
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn deterministic_script_and_observations() {
        let catalog = CommandCatalog::default();
        let task = Task::new("p", TaskKind::Probe).with_targets(["db"]);
        let b = belief("db", &[(FaultKind::DbConnExhausted, 0.4), (FaultKind::SlowQuery, 0.3)]);
        let run = || {
            let mut env = env();
            let mut mem = MemoryStore::default();
            let agent = ProbeAgent::default();
            let script = agent.generate_probe_script(&task, &b, &catalog).unwrap();
            agent.run_probe(&task, &b, &mut env, &mut mem).map(|r| (script, r.observations)).unwrap()
        };
        assert_eq!(run(), run());
    }
}
