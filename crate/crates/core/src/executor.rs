//! The Executor agent: checkpointed plan execution with rollback.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{AoiError, Result};
use crate::memory::{EntryId, MemoryStore, RawContextEntry, Source};
use crate::model::{state_distance, ComponentId, FaultKind, SystemState, Task, TaskId, TaskKind, DIMENSION};
use crate::observer::{FaultBelief, Hypothesis};
use crate::probe::ProbeAgent;
use crate::safety::{Command, PolicyKind, SafetyPolicy};
use crate::simenv::catalog::{CommandCatalog, GLOBALLY_HARMFUL_VERBS};
use crate::simenv::env::Environment;
use crate::simenv::scenario::Topology;

/// Default per-gauge divergence tolerance for critical-failure detection.
pub const DIVERGENCE_TOLERANCE: f64 = 0.3;
/// Default age, in simulated seconds, after which a hypothesis is stale.
pub const STALENESS_BOUND: f64 = 60.0;
/// Default bound on the posterior of any hypothesis under which an action
/// would be harmful.
pub const MAX_ACTION_RISK: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub checkpoint_id: u64,
    pub captured_at: f64,
    pub state_snapshot: SystemState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedEffect {
    pub component: ComponentId,
    pub delta: [f64; DIMENSION],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedAction {
    pub command: Command,
    pub requires_state_refresh: bool,
    pub expected_effect: ExpectedEffect,
    /// The hypothesis this action remediates.
    pub fault: FaultKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub task_id: TaskId,
    pub actions: Vec<PlannedAction>,
}

impl ActionPlan {
    /// Builds a plan, rejecting it when any command fails executor policy.
    pub fn new(task_id: TaskId, actions: Vec<PlannedAction>, policy: &SafetyPolicy) -> Result<Self> {
        let commands: Vec<Command> = actions.iter().map(|a| a.command.clone()).collect();
        let verdict = policy.validate_script(&commands, PolicyKind::ExecutorPolicy);
        if !verdict.safe {
            let detail: Vec<String> =
                verdict.violations.iter().map(|v| format!("#{} {} ({})", v.index, v.verb, v.reason)).collect();
            return Err(AoiError::Planning(format!("plan for {task_id} rejected: {}", detail.join(", "))));
        }
        Ok(ActionPlan { task_id, actions })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecOutcome {
    Completed,
    RolledBack,
    PartialFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOutcome {
    pub command: String,
    pub component: ComponentId,
    pub success: bool,
    pub critical: bool,
    pub observed_effect: [f64; DIMENSION],
    pub refreshed: bool,
    pub started_at: f64,
    pub finished_at: f64,
    /// Ground-truth distance to target around the action; measurement
    /// only, never fed back into decisions.
    pub distance_before: f64,
    pub distance_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub task_id: TaskId,
    pub executed: usize,
    pub outcome: ExecOutcome,
    pub checkpoint: Checkpoint,
    pub rollback_checkpoint: Option<u64>,
    pub action_outcomes: Vec<ActionOutcome>,
    pub raw_entry_ids: Vec<EntryId>,
    /// Status queries issued for stale hypotheses.
    pub refreshes: usize,
}

/// An action held back because it is harmful under a live hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockedAction {
    pub index: usize,
    pub command: String,
    pub hypothesis: Hypothesis,
    pub risk: f64,
}

#[derive(Debug, Clone)]
pub struct ExecutorAgent {
    pub policy: SafetyPolicy,
    pub tolerance: f64,
    pub staleness: f64,
    pub max_action_risk: f64,
    next_checkpoint: u64,
}

impl Default for ExecutorAgent {
    fn default() -> Self {
        ExecutorAgent {
            policy: SafetyPolicy::default(),
            tolerance: DIVERGENCE_TOLERANCE,
            staleness: STALENESS_BOUND,
            max_action_risk: MAX_ACTION_RISK,
            next_checkpoint: 0,
        }
    }
}

fn gauges(state: &SystemState, c: &ComponentId) -> [f64; DIMENSION] {
    let mut out = [0.0; DIMENSION];
    if let Some(s) = state.component(c) {
        out.copy_from_slice(&s.state_vector);
    }
    out
}

fn truth_distance(env: &dyn Environment) -> Result<f64> {
    let s = env.snapshot()?;
    state_distance(&s, &s.target())
}

impl ExecutorAgent {
    pub fn create_checkpoint(&mut self, env: &dyn Environment) -> Result<Checkpoint> {
        self.next_checkpoint += 1;
        Ok(Checkpoint { checkpoint_id: self.next_checkpoint, captured_at: env.now(), state_snapshot: env.snapshot()? })
    }

    /// Catalog lookup: the remediation sequence of every suspect in the
    /// task, components others depend on first. Actions on a component
    /// whose hypothesis was last updated more than the staleness bound ago
    /// (or never) require a state refresh.
    pub fn generate_plan(
        &self,
        task: &Task,
        catalog: &CommandCatalog,
        topology: &Topology,
        last_updated: &BTreeMap<ComponentId, f64>,
        now: f64,
    ) -> Result<ActionPlan> {
        if task.kind != TaskKind::Execute {
            return Err(AoiError::Contract(format!("task {} is not an execute task", task.task_id)));
        }
        if task.suspects.is_empty() {
            return Err(AoiError::Planning(format!("task {} names no fault to remediate", task.task_id)));
        }
        let ranks = topology.dependency_ranks()?;
        let mut suspects: Vec<&(ComponentId, FaultKind)> = task.suspects.iter().collect();
        suspects.sort_by_key(|(c, k)| (ranks.get(c).copied().unwrap_or(0), c.clone(), *k));
        let mut actions = Vec::new();
        for (c, k) in suspects {
            let spec = catalog.fault(*k);
            let steps = spec.remediation_for(c.as_str());
            let n = steps.len() as f64;
            let mut delta = [0.0; DIMENSION];
            for (g, o) in spec.offsets {
                delta[*g] = -o / n;
            }
            let stale = last_updated.get(c).is_none_or(|t| now - t > self.staleness);
            for text in steps {
                let command = self.policy.tokenize_script(&text)?.remove(0);
                actions.push(PlannedAction {
                    command,
                    requires_state_refresh: stale,
                    expected_effect: ExpectedEffect { component: c.clone(), delta },
                    fault: *k,
                });
            }
        }
        ActionPlan::new(task.task_id.clone(), actions, &self.policy)
    }

    /// Actions that are harmful, per the catalog, under some hypothesis the
    /// beliefs still hold above the risk bound.
    pub fn screen(
        &self,
        plan: &ActionPlan,
        beliefs: &BTreeMap<ComponentId, FaultBelief>,
        catalog: &CommandCatalog,
    ) -> Vec<BlockedAction> {
        let mut blocked = Vec::new();
        for (i, a) in plan.actions.iter().enumerate() {
            let c = &a.expected_effect.component;
            let canonical = a.command.canonical();
            let worst = beliefs.get(c).and_then(|b| {
                b.iter()
                    .filter(|(h, _)| h.fault.is_some_and(|k| {
                        catalog.fault(k).harmful_for(c.as_str()).iter().any(|t| Command::parse(t).canonical() == canonical)
                    }))
                    .max_by(|x, y| x.1.total_cmp(&y.1))
                    .map(|(h, p)| (h.clone(), p))
            });
            if GLOBALLY_HARMFUL_VERBS.contains(&a.command.verb.as_str()) {
                blocked.push(BlockedAction {
                    index: i,
                    command: a.command.raw_text.clone(),
                    hypothesis: Hypothesis::new(c.clone(), None),
                    risk: 1.0,
                });
            } else if let Some((h, p)) = worst.filter(|(_, p)| *p > self.max_action_risk) {
                blocked.push(BlockedAction { index: i, command: a.command.raw_text.clone(), hypothesis: h, risk: p });
            }
        }
        blocked
    }

    /// Runs `plan` after taking a checkpoint. A critical outcome, or an
    /// observed gauge change further than the tolerance from the expected
    /// one, restores the checkpoint and stops. Other failures mark the
    /// result partial and continue.
    pub fn execute_plan(
        &mut self,
        plan: &ActionPlan,
        env: &mut dyn Environment,
        probe: &ProbeAgent,
        memory: &mut MemoryStore,
    ) -> Result<ExecResult> {
        let verdict = self
            .policy
            .validate_script(&plan.actions.iter().map(|a| a.command.clone()).collect::<Vec<_>>(), PolicyKind::ExecutorPolicy);
        if !verdict.safe {
            return Err(AoiError::Planning(format!("plan for {} failed validation", plan.task_id)));
        }
        let checkpoint = self.create_checkpoint(env)?;
        let mut outcome = ExecOutcome::Completed;
        let mut rollback_checkpoint = None;
        let mut action_outcomes = Vec::new();
        let mut raw_entry_ids = Vec::new();
        let mut refreshes = 0;
        let mut refreshed_components: Vec<ComponentId> = Vec::new();
        for a in &plan.actions {
            let c = &a.expected_effect.component;
            let mut refreshed = false;
            let mut before = gauges(&env.observe(), c);
            if a.requires_state_refresh && !refreshed_components.contains(c) {
                if let Some(v) = probe.query_state(c, env, memory)? {
                    before.copy_from_slice(&v[..DIMENSION]);
                }
                refreshes += 1;
                refreshed = true;
                refreshed_components.push(c.clone());
            }
            let started_at = env.now();
            let distance_before = truth_distance(env)?;
            let step = env.step(&a.command)?;
            let after = gauges(&env.observe(), c);
            let mut observed_effect = [0.0; DIMENSION];
            for g in 0..DIMENSION {
                observed_effect[g] = after[g] - before[g];
            }
            let diverged = (0..DIMENSION).any(|g| (observed_effect[g] - a.expected_effect.delta[g]).abs() > self.tolerance);
            let critical = step.critical || diverged;
            let id = memory.next_entry_id();
            let text = format!("{}\n{}", a.command.raw_text, step.logs.join("\n"));
            raw_entry_ids.push(memory.put_raw(RawContextEntry::new(id, env.now(), Source::Executor, text))?);
            action_outcomes.push(ActionOutcome {
                command: a.command.raw_text.clone(),
                component: c.clone(),
                success: !step.error && !critical,
                critical,
                observed_effect,
                refreshed,
                started_at,
                finished_at: env.now(),
                distance_before,
                distance_after: truth_distance(env)?,
            });
            if critical {
                env.restore(&checkpoint.state_snapshot)?;
                if !env.snapshot()?.same_ground_truth(&checkpoint.state_snapshot) {
                    return Err(AoiError::Fatal(format!(
                        "rollback to checkpoint {} did not restore ground truth",
                        checkpoint.checkpoint_id
                    )));
                }
                outcome = ExecOutcome::RolledBack;
                rollback_checkpoint = Some(checkpoint.checkpoint_id);
                break;
            }
            if step.error {
                outcome = ExecOutcome::PartialFailure;
            }
        }
        Ok(ExecResult {
            task_id: plan.task_id.clone(),
            executed: action_outcomes.len(),
            outcome,
            checkpoint,
            rollback_checkpoint,
            action_outcomes,
            raw_entry_ids,
            refreshes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Category;
    use crate::simenv::scenario::{InjectedFault, ScenarioSpec};
    use crate::simenv::SimEnv;

    fn env_with(faults: &[(&str, FaultKind)]) -> SimEnv {
        let spec = ScenarioSpec::build(
            "t",
            Category::ServiceFailure,
            Topology::new(&["api", "db"], &[("api", "db")]),
            faults.iter().map(|(c, k)| InjectedFault { component: (*c).into(), fault: *k, at: 0.0 }).collect(),
            3,
        );
        SimEnv::load(&spec, 0).unwrap()
    }

    fn exec_task(suspects: &[(&str, FaultKind)]) -> Task {
        let mut t = Task::new("e", TaskKind::Execute);
        for (c, k) in suspects {
            t = t.with_suspect(*c, *k);
        }
        t
    }

    #[test]
    fn checkpoint_restore_identity() {
        let mut env = env_with(&[("db", FaultKind::DbConnExhausted)]);
        let mut ex = ExecutorAgent::default();
        let a = ex.create_checkpoint(&env).unwrap();
        let b = ex.create_checkpoint(&env).unwrap();
        assert_eq!(a.state_snapshot, b.state_snapshot);
        env.restore(&a.state_snapshot).unwrap();
        let now = env.snapshot().unwrap();
        assert_eq!(state_distance(&now, &a.state_snapshot).unwrap(), 0.0);
    }

    #[test]
    fn checkpoint_restores_a_mutated_gauge() {
        let mut env = env_with(&[("db", FaultKind::DbConnExhausted)]);
        let mut ex = ExecutorAgent::default();
        let cp = ex.create_checkpoint(&env).unwrap();
        env.step(&Command::parse("KILL idle-connections db")).unwrap();
        assert!(!env.snapshot().unwrap().same_ground_truth(&cp.state_snapshot));
        env.restore(&cp.state_snapshot).unwrap();
        assert!(env.snapshot().unwrap().same_ground_truth(&cp.state_snapshot));
    }

    #[test]
    fn single_fault_plan_is_the_catalog_sequence() {
        let catalog = CommandCatalog::default();
        let top = Topology::new(&["db"], &[]);
        let plan = ExecutorAgent::default()
            .generate_plan(&exec_task(&[("db", FaultKind::DbConnExhausted)]), &catalog, &top, &BTreeMap::new(), 0.0)
            .unwrap();
        let got: Vec<&str> = plan.actions.iter().map(|a| a.command.raw_text.as_str()).collect();
        assert_eq!(got, catalog.fault(FaultKind::DbConnExhausted).remediation_for("db"));
    }

    #[test]
    fn dependencies_are_remediated_first() {
        let catalog = CommandCatalog::default();
        let top = Topology::new(&["b", "a"], &[("b", "a")]);
        let plan = ExecutorAgent::default()
            .generate_plan(
                &exec_task(&[("b", FaultKind::MemoryLeak), ("a", FaultKind::ProcessCrash)]),
                &catalog,
                &top,
                &BTreeMap::new(),
                0.0,
            )
            .unwrap();
        let comps: Vec<&str> = plan.actions.iter().map(|a| a.expected_effect.component.as_str()).collect();
        assert_eq!(comps, ["a", "a", "b", "b"]);
    }

    #[test]
    fn drop_is_rejected_at_planning() {
        let action = PlannedAction {
            command: Command::parse("DROP TABLE sessions"),
            requires_state_refresh: false,
            expected_effect: ExpectedEffect { component: "db".into(), delta: [0.0; DIMENSION] },
            fault: FaultKind::SlowQuery,
        };
        let err = ActionPlan::new("e".into(), vec![action], &SafetyPolicy::default()).unwrap_err();
        assert!(matches!(err, AoiError::Planning(_)));
    }

    #[test]
    fn staleness_marks_refresh() {
        let catalog = CommandCatalog::default();
        let top = Topology::new(&["db"], &[]);
        let task = exec_task(&[("db", FaultKind::SlowQuery)]);
        let ex = ExecutorAgent::default();
        let fresh = ex.generate_plan(&task, &catalog, &top, &[("db".into(), 100.0)].into(), 130.0).unwrap();
        assert!(fresh.actions.iter().all(|a| !a.requires_state_refresh));
        let stale = ex.generate_plan(&task, &catalog, &top, &[("db".into(), 10.0)].into(), 130.0).unwrap();
        assert!(stale.actions.iter().all(|a| a.requires_state_refresh));
    }

    #[test]
    fn correct_plan_completes() {
        let mut env = env_with(&[("db", FaultKind::DependencyTimeout)]);
        let mut mem = MemoryStore::default();
        let mut ex = ExecutorAgent::default();
        let plan = ex
            .generate_plan(&exec_task(&[("db", FaultKind::DependencyTimeout)]), env.catalog(), &env.topology().clone(), &BTreeMap::new(), 0.0)
            .unwrap();
        let r = ex.execute_plan(&plan, &mut env, &ProbeAgent::default(), &mut mem).unwrap();
        assert_eq!(r.outcome, ExecOutcome::Completed);
        assert_eq!(r.executed, 2);
        assert_eq!(r.refreshes, 1);
        assert!(env.resolved());
    }

    #[test]
    fn critical_failure_rolls_back_exactly() {
        // RESTART service is harmful under connection-pool exhaustion.
        let mut env = env_with(&[("db", FaultKind::DbConnExhausted)]);
        let mut mem = MemoryStore::default();
        let mut ex = ExecutorAgent::default();
        let plan = ex
            .generate_plan(&exec_task(&[("db", FaultKind::MemoryLeak)]), env.catalog(), &env.topology().clone(), &BTreeMap::new(), 0.0)
            .unwrap();
        let r = ex.execute_plan(&plan, &mut env, &ProbeAgent::default(), &mut mem).unwrap();
        assert_eq!(r.outcome, ExecOutcome::RolledBack);
        assert_eq!(r.rollback_checkpoint, Some(r.checkpoint.checkpoint_id));
        assert!(env.snapshot().unwrap().same_ground_truth(&r.checkpoint.state_snapshot));
    }

    #[test]
    fn divergence_alone_triggers_rollback() {
        // Crash-lock clearing is known but does nothing for a slow query; the
        // availability gauge fails to rise as expected.
        let mut env = env_with(&[("db", FaultKind::SlowQuery)]);
        let mut mem = MemoryStore::default();
        let mut ex = ExecutorAgent::default();
        let plan = ex
            .generate_plan(&exec_task(&[("db", FaultKind::ProcessCrash)]), env.catalog(), &env.topology().clone(), &BTreeMap::new(), 0.0)
            .unwrap();
        let r = ex.execute_plan(&plan, &mut env, &ProbeAgent::default(), &mut mem).unwrap();
        assert_eq!(r.outcome, ExecOutcome::RolledBack);
        assert!(!r.action_outcomes[0].success);
        assert_eq!(r.executed, 1);
    }

    #[test]
    fn screen_blocks_actions_harmful_under_live_hypotheses() {
        let catalog = CommandCatalog::default();
        let top = Topology::new(&["db"], &[]);
        let ex = ExecutorAgent::default();
        let plan = ex.generate_plan(&exec_task(&[("db", FaultKind::MemoryLeak)]), &catalog, &top, &BTreeMap::new(), 0.0).unwrap();
        let belief = |p: f64| {
            let m: BTreeMap<Hypothesis, f64> = [
                (Hypothesis::new("db", Some(FaultKind::MemoryLeak)), 1.0 - p),
                (Hypothesis::new("db", Some(FaultKind::DbConnExhausted)), p),
            ]
            .into();
            BTreeMap::from([(ComponentId::from("db"), FaultBelief::new(m).unwrap())])
        };
        let blocked = ex.screen(&plan, &belief(0.3), &catalog);
        assert_eq!(blocked.len(), 1);
        assert_eq!(blocked[0].command, "RESTART service db");
        assert!(ex.screen(&plan, &belief(0.05), &catalog).is_empty());
    }
}
