//! The Observer decision loop tying the agents, memory and compressor to
//! one simulated incident.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::compressor::{count_tokens, Compressor, ExtractiveSummarizer, Summarizer};
use crate::config::{EngineConfig, SummarizerKind};
use crate::error::{AoiError, Result};
use crate::executor::ExecutorAgent;
use crate::llm::{truncate_to_budget, RemoteSummarizer};
use crate::memory::{EntryId, Layer, MemoryStore, StoredEntry};
use crate::metrics::{evaluate_run, EventKind, RunRecord, RunTrace};
use crate::model::{state_distance, ComponentId, FaultKind, SystemState, Task, TaskId, TaskKind, TaskStatus, BASELINE, DIMENSION};
use crate::observer::{
    decompose, incident_task, parse_evidence, posterior_of, residuals, schedule, symptom_prior, update_belief,
    ExecuteOption, FaultBelief, Hypothesis, ProbeOption, QueueView, CONFIRMED, HYPOTHESIS_THRESHOLD,
};
use crate::probe::ProbeAgent;
use crate::simenv::catalog::PROPAGATION;
use crate::simenv::env::ANOMALY_THRESHOLD;
use crate::simenv::logs::planted_tags;
use crate::simenv::{Environment, ScenarioSpec, SimEnv};

/// Simulated seconds per Observer decision at concurrency 1.
pub const DECISION_LATENCY: f64 = 2.3;
/// Extra decision latency per additional concurrent incident.
pub const CONTENTION: f64 = 0.05;
/// Simulated compute charged per summarized window.
pub const WINDOW_COMPUTE: f64 = 0.1;
pub const POLL_INTERVAL: f64 = 5.0;
pub const CONFIRMATION_WAIT: f64 = 30.0;
pub const IDLE_WAIT: f64 = 30.0;
/// Multiplier applied to a hypothesis whose remediation did not work.
pub const FAILURE_PENALTY: f64 = 0.1;
/// Longest quiet period monitored before a run with pending injections is
/// abandoned.
pub const DETECTION_HORIZON: f64 = 7200.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    NoIncident,
    Resolved,
    Escalated,
    StepBudget,
    Undetected,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: RunTrace,
    pub record: RunRecord,
    pub termination: Termination,
    pub log_digest: String,
    pub decisions: u64,
}

/// The configured summarizer: extractive, or the remote adapter when
/// selected (which needs its token).
pub fn summarizer_for(config: &EngineConfig) -> Result<Arc<dyn Summarizer>> {
    Ok(match config.summarizer {
        SummarizerKind::Extractive => Arc::new(ExtractiveSummarizer),
        SummarizerKind::Remote => Arc::new(RemoteSummarizer::from_env(config.remote.clone())?),
    })
}

#[derive(Clone)]
pub struct Engine {
    config: EngineConfig,
    compressor: Compressor,
    concurrency: usize,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).field("concurrency", &self.concurrency).finish()
    }
}

impl Engine {
    pub fn new(config: EngineConfig, summarizer: Arc<dyn Summarizer>) -> Result<Self> {
        config.check()?;
        let compressor = Compressor::new(config.compression(), summarizer);
        Ok(Engine { config, compressor, concurrency: 1 })
    }

    /// Engine with the extractive summarizer.
    pub fn extractive(config: EngineConfig) -> Result<Self> {
        Self::new(config, Arc::new(ExtractiveSummarizer))
    }

    /// Number of incidents sharing the Observer; stretches decision latency.
    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn decision_latency(&self) -> f64 {
        DECISION_LATENCY * (1.0 + CONTENTION * (self.concurrency as f64 - 1.0))
    }

    /// Runs one scenario to termination and evaluates it.
    pub fn run(&self, spec: &ScenarioSpec, seed: u64) -> Result<RunOutput> {
        let mut env = SimEnv::load(spec, seed)?;
        let mut run = Run::new(self, &env, spec, seed);
        let termination = run.drive(&mut env)?;
        let resolved = env.resolved();
        let end = run.end_time.unwrap_or(env.now());
        run.trace.push(env.now(), EventKind::Terminated { reason: format!("{termination:?}") })?;
        run.trace.compute_seconds = run.compute;
        run.trace.tasks_completed = run.memory.tasks.completed() as u64;
        run.trace.finish(end, env.snapshot()?, resolved);
        let record = evaluate_run(&run.trace, spec, env.catalog())?;
        Ok(RunOutput { record, termination, log_digest: env.log_digest(), decisions: run.decisions, trace: run.trace })
    }
}

struct Run<'e> {
    engine: &'e Engine,
    cfg: &'e EngineConfig,
    memory: MemoryStore,
    probe: ProbeAgent,
    executor: ExecutorAgent,
    trace: RunTrace,
    beliefs: BTreeMap<ComponentId, FaultBelief>,
    last_updated: BTreeMap<ComponentId, f64>,
    consumed: BTreeSet<EntryId>,
    penalties: BTreeMap<(ComponentId, FaultKind), i32>,
    gated: BTreeSet<(ComponentId, FaultKind)>,
    last_kind: Option<TaskKind>,
    compute: f64,
    decisions: u64,
    round: u64,
    end_time: Option<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn anomalous(state: &SystemState) -> bool {
    state.components.iter().any(|c| c.deviation() > ANOMALY_THRESHOLD)
}

impl<'e> Run<'e> {
    fn new(engine: &'e Engine, _env: &SimEnv, spec: &ScenarioSpec, seed: u64) -> Self {
        let cfg = &engine.config;
        let memory = if cfg.features.three_layer_memory {
            MemoryStore::new(cfg.raw_ttl, cfg.compressed_ttl)
        } else {
            MemoryStore::flat()
        };
        Run {
            engine,
            cfg,
            memory,
            probe: ProbeAgent::default(),
            executor: ExecutorAgent::default(),
            trace: RunTrace::new(spec.scenario_id.clone(), seed),
            beliefs: BTreeMap::new(),
            last_updated: BTreeMap::new(),
            consumed: BTreeSet::new(),
            penalties: BTreeMap::new(),
            gated: BTreeSet::new(),
            last_kind: None,
            compute: 0.0,
            decisions: 0,
            round: 0,
            end_time: None,
        }
    }

    fn drive(&mut self, env: &mut SimEnv) -> Result<Termination> {
        // Monitoring until the first anomaly.
        loop {
            if anomalous(&env.observe()) {
                break;
            }
            if env.pending_injections() == 0 || env.now() > DETECTION_HORIZON {
                self.trace.start_time = env.now();
                self.end_time = Some(env.now());
                return Ok(if env.pending_injections() == 0 { Termination::NoIncident } else { Termination::Undetected });
            }
            env.advance_clock(POLL_INTERVAL);
        }
        self.trace.start_time = env.now();
        self.trace.push(env.now(), EventKind::IncidentDetected)?;
        let max_rounds = 4 * self.cfg.step_budget;
        loop {
            if env.escalated() {
                return Ok(Termination::Escalated);
            }
            if env.steps() >= self.cfg.step_budget || self.round >= max_rounds {
                return Ok(Termination::StepBudget);
            }
            self.round += 1;
            let observed = env.observe();
            if !anomalous(&observed) {
                let seen_clear = env.now();
                self.wait(env, CONFIRMATION_WAIT)?;
                if !anomalous(&env.observe()) {
                    self.end_time = Some(seen_clear);
                    return Ok(Termination::Resolved);
                }
                continue;
            }
            self.triage(env, &observed)?;
            self.ingest(env)?;
            self.decide(env)?;
        }
    }

    fn wait(&mut self, env: &mut SimEnv, seconds: f64) -> Result<()> {
        self.trace.push(env.now(), EventKind::Wait { seconds })?;
        env.advance_clock(seconds);
        Ok(())
    }

    fn residual_norms(&self, env: &SimEnv, state: &SystemState) -> Result<BTreeMap<ComponentId, ([f64; DIMENSION], f64)>> {
        Ok(residuals(&state.components, env.topology())?.into_iter().map(|(c, r)| (c, (r, norm(&r)))).collect())
    }

    fn prior(&self, env: &SimEnv, c: &ComponentId, r: &[f64; DIMENSION]) -> Result<FaultBelief> {
        let mut b = symptom_prior(env.catalog(), c, r);
        for ((pc, k), n) in &self.penalties {
            if pc == c {
                b = b.scale(&Hypothesis::new(c.clone(), Some(*k)), FAILURE_PENALTY.powi(*n))?;
            }
        }
        Ok(b)
    }

    /// Keeps one belief per component with an unexplained symptom.
    fn triage(&mut self, env: &SimEnv, observed: &SystemState) -> Result<()> {
        let res = self.residual_norms(env, observed)?;
        self.beliefs.retain(|c, _| res.get(c).is_some_and(|(_, n)| *n > ANOMALY_THRESHOLD));
        for (c, (r, n)) in &res {
            if *n > ANOMALY_THRESHOLD && !self.beliefs.contains_key(c) {
                let b = self.prior(env, c, r)?;
                self.beliefs.insert(c.clone(), b);
                self.last_updated.remove(c);
            }
        }
        Ok(())
    }

    /// Reads unseen context about the suspect components, within the
    /// context budget, and folds any diagnostic verdicts into the beliefs.
    fn ingest(&mut self, env: &SimEnv) -> Result<f64> {
        if self.beliefs.is_empty() {
            return Ok(0.0);
        }
        let keys: Vec<&str> = self.beliefs.keys().map(ComponentId::as_str).collect();
        let layer = if self.cfg.features.compressor { Layer::Compressed } else { Layer::Raw };
        let hits = self.memory.query_context(&keys, layer, env.now());
        let mut budget = self.cfg.context_budget;
        let mut context = String::new();
        for hit in hits {
            let sources: Vec<EntryId> = match &hit.entry {
                StoredEntry::Raw(e) => vec![e.entry_id],
                StoredEntry::Compressed(e) => e.source_entry_ids.iter().copied().collect(),
            };
            if sources.iter().all(|s| self.consumed.contains(s)) {
                continue;
            }
            let n = count_tokens(hit.entry.text());
            if n > budget && !context.is_empty() {
                continue;
            }
            let (text, _) = truncate_to_budget(hit.entry.text(), budget);
            context.push_str(&text);
            context.push('\n');
            budget -= n.min(budget);
            self.consumed.extend(sources);
            if budget == 0 {
                break;
            }
        }
        let evidence = parse_evidence(&context, env.catalog(), env.topology());
        let mut by_component: BTreeMap<ComponentId, Vec<_>> = BTreeMap::new();
        for ev in evidence {
            by_component.entry(ev.component.clone()).or_default().push(ev);
        }
        let mut gain = 0.0;
        for (c, evs) in by_component {
            let Some(b) = self.beliefs.get(&c) else { continue };
            match update_belief(b, &evs, env.catalog()) {
                Ok((nb, g)) => {
                    gain += g;
                    self.beliefs.insert(c.clone(), nb);
                    self.last_updated.insert(c.clone(), env.now());
                    self.gated.retain(|(gc, _)| *gc != c);
                }
                Err(AoiError::DegenerateEvidence(_)) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(gain)
    }

    fn think(&mut self, env: &mut SimEnv) {
        let latency = self.engine.decision_latency();
        self.compute += latency;
        self.decisions += 1;
        env.advance_clock(latency);
    }

    fn next_id(&mut self) -> String {
        format!("t{}", self.round)
    }

    /// Builds this round's tasks in the queue.
    fn plan(&mut self, env: &SimEnv) -> Result<()> {
        self.memory.tasks.clear_pending();
        let id = self.next_id();
        let task = incident_task(&id, &self.beliefs, HYPOTHESIS_THRESHOLD);
        if task.suspects.is_empty() {
            return Ok(());
        }
        let mut subtasks = decompose(
            &task,
            &self.beliefs,
            env.topology(),
            env.catalog(),
            self.cfg.theta_complex,
            HYPOTHESIS_THRESHOLD,
        )?;
        if subtasks.len() == 1 && subtasks[0].kind == TaskKind::Composite {
            subtasks = self.split_composite(&subtasks[0]);
        }
        for t in &mut subtasks {
            let gated = t.suspects.iter().any(|s| self.gated.contains(s));
            if t.kind == TaskKind::Execute && gated {
                t.kind = TaskKind::Probe;
            }
        }
        for t in subtasks {
            self.memory.tasks.enqueue(t)?;
        }
        Ok(())
    }

    /// A composite at or below the complexity threshold is worked as a
    /// whole: one probe over its unconfirmed suspects and one execute over
    /// its confirmed ones.
    fn split_composite(&self, task: &Task) -> Vec<Task> {
        let mut probe = Task::new(format!("{}.p", task.task_id), TaskKind::Probe);
        let mut exec = Task::new(format!("{}.e", task.task_id), TaskKind::Execute);
        for (c, k) in &task.suspects {
            let p = posterior_of(&self.beliefs, c, *k);
            if p >= CONFIRMED && !self.gated.contains(&(c.clone(), *k)) {
                exec = exec.with_suspect(c.clone(), *k);
            } else {
                probe = probe.with_suspect(c.clone(), *k);
            }
        }
        [probe, exec].into_iter().filter(|t| !t.suspects.is_empty()).collect()
    }

    fn predicted_state(&self, env: &SimEnv, observed: &SystemState, component: &ComponentId) -> SystemState {
        let mut s = observed.clone();
        if let Some(c) = s.component_mut(component) {
            c.state_vector = BASELINE.to_vec();
        }
        for d in env.topology().dependents(component) {
            if let Some(dc) = s.component_mut(d) {
                for (g, o) in PROPAGATION {
                    dc.state_vector[g] = (dc.state_vector[g] - o).max(BASELINE[g]);
                }
            }
        }
        s
    }

    fn view(&self, env: &SimEnv) -> Result<QueueView> {
        let observed = env.observe();
        let current = state_distance(&observed, &observed.target())?;
        let mut view = QueueView::default();
        for t in self.memory.tasks.runnable_tasks() {
            match t.kind {
                TaskKind::Probe => {
                    let entropy = t
                        .target_components
                        .iter()
                        .filter_map(|c| self.beliefs.get(c))
                        .map(FaultBelief::normalized_entropy)
                        .fold(0.0, f64::max);
                    let diagnosticity = t
                        .suspects
                        .iter()
                        .map(|(c, k)| posterior_of(&self.beliefs, c, *k) * env.catalog().diagnostic_for(*k).diagnosticity)
                        .fold(0.0, f64::max);
                    view.probes.push(ProbeOption { task_id: t.task_id.clone(), entropy, diagnosticity });
                }
                TaskKind::Execute => {
                    let mut expected = 0.0;
                    for (c, k) in &t.suspects {
                        let after = state_distance(&self.predicted_state(env, &observed, c), &observed.target())?;
                        expected += posterior_of(&self.beliefs, c, *k) * (current - after).max(0.0);
                    }
                    view.executes.push(ExecuteOption {
                        task_id: t.task_id.clone(),
                        predicted_reduction: expected,
                        current_distance: current,
                    });
                }
                TaskKind::Composite => {}
            }
        }
        Ok(view)
    }

    fn choose(&mut self, env: &SimEnv) -> Result<Option<(TaskId, TaskKind, f64, f64)>> {
        let view = self.view(env)?;
        if self.cfg.features.dynamic_scheduling {
            return Ok(schedule(&view, self.cfg.lambda)?.map(|d| (d.task_id, d.chosen, d.probe_reward, d.execute_reward)));
        }
        let want = match self.last_kind {
            Some(TaskKind::Probe) => TaskKind::Execute,
            _ => TaskKind::Probe,
        };
        let runnable = self.memory.tasks.runnable_tasks();
        let pick = runnable.iter().find(|t| t.kind == want).or_else(|| runnable.first());
        Ok(pick.map(|t| (t.task_id.clone(), t.kind, 0.0, 0.0)))
    }

    fn decide(&mut self, env: &mut SimEnv) -> Result<()> {
        self.think(env);
        let choice = if self.cfg.features.multi_agent { self.multi_agent_choice(env)? } else { self.single_agent_choice()? };
        let Some((task_id, kind, pr, er)) = choice else {
            self.wait(env, IDLE_WAIT)?;
            // Re-triage from scratch: gates and beliefs rebuilt on the next round.
            self.gated.clear();
            self.beliefs.clear();
            return Ok(());
        };
        self.trace.push(
            env.now(),
            EventKind::Decision { chosen: kind, task_id: task_id.0.clone(), probe_reward: pr, execute_reward: er },
        )?;
        self.last_kind = Some(kind);
        let task = self
            .memory
            .tasks
            .dequeue_id(&task_id)
            .ok_or_else(|| AoiError::Fatal(format!("scheduled task {task_id} is not runnable")))?;
        match kind {
            TaskKind::Probe => self.run_probe(env, &task),
            TaskKind::Execute => self.run_execute(env, &task),
            TaskKind::Composite => Err(AoiError::Fatal("composite task scheduled directly".into())),
        }
    }

    fn multi_agent_choice(&mut self, env: &SimEnv) -> Result<Option<(TaskId, TaskKind, f64, f64)>> {
        self.plan(env)?;
        self.choose(env)
    }

    /// One agent doing everything inline: execute the top hypothesis once it
    /// is confirmed, otherwise sweep every live hypothesis.
    fn single_agent_choice(&mut self) -> Result<Option<(TaskId, TaskKind, f64, f64)>> {
        self.memory.tasks.clear_pending();
        let id = self.next_id();
        let mut top: Option<(f64, ComponentId, FaultKind)> = None;
        let mut sweep = Task::new(format!("{id}.sweep"), TaskKind::Probe);
        for (c, b) in &self.beliefs {
            for (h, p) in b.iter() {
                let Some(k) = h.fault else { continue };
                if p >= HYPOTHESIS_THRESHOLD {
                    sweep = sweep.with_suspect(c.clone(), k);
                }
                let pair = (c.clone(), k);
                if p >= CONFIRMED && !self.gated.contains(&pair) && top.as_ref().is_none_or(|t| p > t.0) {
                    top = Some((p, c.clone(), k));
                }
            }
        }
        let task = match top {
            Some((_, c, k)) => Task::new(format!("{id}.fix"), TaskKind::Execute).with_suspect(c, k),
            None if !sweep.suspects.is_empty() => sweep,
            None => return Ok(None),
        };
        let (tid, kind) = (task.task_id.clone(), task.kind);
        self.memory.tasks.enqueue(task)?;
        Ok(Some((tid, kind, 0.0, 0.0)))
    }

    fn run_probe(&mut self, env: &mut SimEnv, task: &Task) -> Result<()> {
        let result = match self.probe.run_probe(task, &self.beliefs, env, &mut self.memory) {
            Ok(r) => r,
            Err(AoiError::EmptyScript(_)) => {
                self.memory.tasks.complete(&task.task_id, TaskStatus::Failed)?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        if self.cfg.features.compressor {
            for (obs, id) in result.observations.iter().zip(&result.raw_entry_ids) {
                let (_, c) = self.engine.compressor.compress_into(&mut self.memory, &obs.text, [*id].into(), env.now())?;
                self.compute += WINDOW_COMPUTE * c.windows as f64;
                let truth: BTreeSet<String> = planted_tags(&obs.text).into_iter().collect();
                self.trace.push(
                    env.now(),
                    EventKind::Compression {
                        raw_tokens: c.raw_tokens,
                        compressed_tokens: c.compressed_tokens,
                        truth_tags: truth,
                        preserved_tags: c.preserved_tags.clone(),
                    },
                )?;
            }
        }
        let gain = self.ingest(env)?;
        self.trace.push(
            env.now(),
            EventKind::Probe {
                task_id: task.task_id.0.clone(),
                commands: result.observations.iter().map(|o| o.command.raw_text.clone()).collect(),
                information_gain: gain,
            },
        )?;
        self.memory.tasks.complete(&task.task_id, TaskStatus::Done)
    }

    fn run_execute(&mut self, env: &mut SimEnv, task: &Task) -> Result<()> {
        let plan = self.executor.generate_plan(task, env.catalog(), env.topology(), &self.last_updated, env.now())?;
        for a in &plan.actions {
            self.trace.push(
                env.now(),
                EventKind::Proposed { command: a.command.raw_text.clone(), component: a.expected_effect.component.clone() },
            )?;
        }
        let blocked = self.executor.screen(&plan, &self.beliefs, env.catalog());
        if !blocked.is_empty() {
            for b in &blocked {
                self.trace.push(
                    env.now(),
                    EventKind::Blocked {
                        command: b.command.clone(),
                        reason: format!("harmful under {} at {:.2}", b.hypothesis, b.risk),
                    },
                )?;
                let a = &plan.actions[b.index];
                self.gated.insert((a.expected_effect.component.clone(), a.fault));
            }
            return self.memory.tasks.complete(&task.task_id, TaskStatus::Failed);
        }
        let result = self.executor.execute_plan(&plan, env, &self.probe, &mut self.memory)?;
        self.trace.push(result.checkpoint.captured_at, EventKind::Checkpoint { checkpoint_id: result.checkpoint.checkpoint_id })?;
        for o in &result.action_outcomes {
            self.trace.push(
                o.finished_at,
                EventKind::Command {
                    command: o.command.clone(),
                    component: o.component.clone(),
                    mutating: true,
                    success: o.success,
                    critical: o.critical,
                    distance_before: o.distance_before,
                    distance_after: o.distance_after,
                },
            )?;
        }
        if let Some(id) = result.rollback_checkpoint {
            self.trace.push(env.now(), EventKind::Rollback { checkpoint_id: id })?;
        }
        let observed = env.observe();
        let res = self.residual_norms(env, &observed)?;
        for (c, k) in &task.suspects {
            if res.get(c).is_some_and(|(_, n)| *n <= ANOMALY_THRESHOLD) {
                self.beliefs.remove(c);
                self.last_updated.remove(c);
                self.penalties.retain(|(pc, _), _| pc != c);
            } else {
                *self.penalties.entry((c.clone(), *k)).or_insert(0) += 1;
                if let Some(b) = self.beliefs.get(c) {
                    let nb = b.scale(&Hypothesis::new(c.clone(), Some(*k)), FAILURE_PENALTY)?;
                    self.beliefs.insert(c.clone(), nb);
                }
            }
        }
        let status = if result.rollback_checkpoint.is_some() { TaskStatus::Failed } else { TaskStatus::Done };
        self.memory.tasks.complete(&task.task_id, status)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Ablation;
    use crate::model::Category;
    use crate::simenv::scenario::{InjectedFault, Topology};

    fn spec(faults: &[(&str, FaultKind, f64)]) -> ScenarioSpec {
        ScenarioSpec::build(
            "e",
            Category::ServiceFailure,
            Topology::new(&["web", "api", "db"], &[("web", "api"), ("api", "db")]),
            faults.iter().map(|(c, k, at)| InjectedFault { component: (*c).into(), fault: *k, at: *at }).collect(),
            7,
        )
    }

    #[test]
    fn null_scenario_resolves_immediately() {
        let out = Engine::extractive(EngineConfig::default()).unwrap().run(&spec(&[]), 0).unwrap();
        assert_eq!(out.termination, Termination::NoIncident);
        assert!(out.record.success);
        assert_eq!(out.record.mttr_minutes, 0.0);
    }

    #[test]
    fn single_fault_is_resolved() {
        let s = spec(&[("db", FaultKind::DbConnExhausted, 10.0)]);
        let out = Engine::extractive(EngineConfig::default()).unwrap().run(&s, 1).unwrap();
        assert_eq!(out.termination, Termination::Resolved, "{:#?}", out.trace.events);
        assert!(out.record.success);
        assert!(out.trace.start_time >= 10.0);
        assert!(out.record.mttr_minutes > 0.0);
    }

    #[test]
    fn cascade_is_resolved() {
        let s = spec(&[("db", FaultKind::SlowQuery, 0.0), ("web", FaultKind::CertificateExpired, 0.0)]);
        let out = Engine::extractive(EngineConfig::default()).unwrap().run(&s, 2).unwrap();
        assert!(out.record.success, "{:?} {:#?}", out.termination, out.trace.events);
    }

    #[test]
    fn runs_are_deterministic() {
        let s = spec(&[("api", FaultKind::MemoryLeak, 0.0)]);
        let e = Engine::extractive(EngineConfig::default()).unwrap();
        let a = e.run(&s, 3).unwrap();
        let b = e.run(&s, 3).unwrap();
        assert_eq!(serde_json::to_string(&a.trace).unwrap(), serde_json::to_string(&b.trace).unwrap());
        assert_eq!(a.log_digest, b.log_digest);
    }

    #[test]
    fn every_ablation_runs() {
        let s = spec(&[("api", FaultKind::DdosTraffic, 0.0)]);
        for a in Ablation::ALL {
            let e = Engine::extractive(EngineConfig::default().with_ablation(a)).unwrap();
            let out = e.run(&s, 4).unwrap();
            assert!(out.trace.complete, "{a:?}");
            if a == Ablation::NoCompressor {
                assert!(out.record.ccr.is_none());
            }
        }
    }

    #[test]
    fn contention_stretches_decisions() {
        let e = Engine::extractive(EngineConfig::default()).unwrap().with_concurrency(20);
        assert!((e.decision_latency() - 2.3 * 1.95).abs() < 1e-12);
    }
}
