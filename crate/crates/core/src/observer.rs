//! The Observer: fault beliefs, task complexity and decomposition, and the
//! probe-versus-execute scheduler.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{AoiError, Result};
use crate::model::{ComponentId, ComponentState, FaultKind, Task, TaskId, TaskKind, BASELINE, DIMENSION};
use crate::simenv::catalog::{CommandCatalog, DiagOutcome, PROPAGATION};
use crate::simenv::env::{Evidence, ANOMALY_THRESHOLD};
use crate::simenv::scenario::Topology;

/// Default complexity threshold above which tasks are decomposed.
pub const THETA_COMPLEX: f64 = 4.0;
/// Default exploration weight.
pub const LAMBDA: f64 = 0.35;
/// Posterior at or above which a hypothesis counts as confirmed.
pub const CONFIRMED: f64 = 0.5;
/// Posterior below which a hypothesis is not worth probing.
pub const HYPOTHESIS_THRESHOLD: f64 = 0.05;

/// A (component, fault) hypothesis; `fault: None` is "no fault".
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hypothesis {
    pub component: ComponentId,
    pub fault: Option<FaultKind>,
}

impl Hypothesis {
    pub fn new(component: impl Into<ComponentId>, fault: Option<FaultKind>) -> Self {
        Hypothesis { component: component.into(), fault }
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fault {
            Some(k) => write!(f, "{}:{k}", self.component),
            None => write!(f, "{}:no-fault", self.component),
        }
    }
}

/// Normalized posterior over hypotheses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultBelief {
    posteriors: BTreeMap<Hypothesis, f64>,
    entropy: f64,
}

fn entropy_bits<'a>(ps: impl Iterator<Item = &'a f64>) -> f64 {
    ps.filter(|p| **p > 0.0).map(|p| -p * p.log2()).sum::<f64>().max(0.0)
}

impl FaultBelief {
    /// Normalizes non-negative weights into a belief.
    pub fn new(weights: BTreeMap<Hypothesis, f64>) -> Result<Self> {
        if weights.values().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(AoiError::Contract("belief weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.values().sum();
        if total <= 0.0 {
            return Err(AoiError::DegenerateEvidence("all hypothesis weights are zero".into()));
        }
        let posteriors: BTreeMap<_, _> = weights.into_iter().map(|(h, w)| (h, w / total)).collect();
        let entropy = entropy_bits(posteriors.values());
        Ok(FaultBelief { posteriors, entropy })
    }

    pub fn uniform<I: IntoIterator<Item = Hypothesis>>(hypotheses: I) -> Result<Self> {
        Self::new(hypotheses.into_iter().map(|h| (h, 1.0)).collect())
    }

    pub fn posterior(&self, h: &Hypothesis) -> f64 {
        self.posteriors.get(h).copied().unwrap_or(0.0)
    }

    /// Shannon entropy in bits.
    pub fn entropy(&self) -> f64 {
        self.entropy
    }

    /// Entropy divided by its maximum, `log2(n)`; 0 for a single hypothesis.
    pub fn normalized_entropy(&self) -> f64 {
        let n = self.posteriors.len();
        if n < 2 {
            0.0
        } else {
            (self.entropy / (n as f64).log2()).clamp(0.0, 1.0)
        }
    }

    pub fn len(&self) -> usize {
        self.posteriors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posteriors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Hypothesis, f64)> {
        self.posteriors.iter().map(|(h, p)| (h, *p))
    }

    /// Most probable hypothesis; ties go to the smallest key.
    pub fn top(&self) -> Option<(&Hypothesis, f64)> {
        self.iter().fold(None, |best, (h, p)| match best {
            Some((_, bp)) if bp >= p => best,
            _ => Some((h, p)),
        })
    }

    /// Posterior proportional to prior times `likelihood`.
    pub fn update<F: Fn(&Hypothesis) -> f64>(&self, likelihood: F) -> Result<FaultBelief> {
        let weights: BTreeMap<_, _> = self.posteriors.iter().map(|(h, p)| (h.clone(), p * likelihood(h))).collect();
        Self::new(weights)
    }

    /// Multiplies one hypothesis by `factor` and renormalizes.
    pub fn scale(&self, h: &Hypothesis, factor: f64) -> Result<FaultBelief> {
        self.update(|x| if x == h { factor } else { 1.0 })
    }
}

/// Likelihood of one diagnostic outcome under `h`. A hypothesis about a
/// different component implies the probed component is fault-free.
pub fn evidence_likelihood(catalog: &CommandCatalog, ev: &Evidence, h: &Hypothesis) -> f64 {
    let fault = if h.component == ev.component { h.fault } else { None };
    catalog.likelihood(ev.diagnostic, ev.outcome, fault)
}

/// Applies `evidence` in order. Returns the new belief and the entropy
/// reduction. On degenerate evidence the belief is left unchanged and the
/// error is returned.
pub fn update_belief(belief: &FaultBelief, evidence: &[Evidence], catalog: &CommandCatalog) -> Result<(FaultBelief, f64)> {
    let mut b = belief.clone();
    for ev in evidence {
        b = b.update(|h| evidence_likelihood(catalog, ev, h))?;
    }
    let gain = belief.entropy() - b.entropy();
    Ok((b, gain))
}

/// Expected entropy after running diagnostic `diag` on `component`, over
/// the catalog's outcome distribution under the current belief.
pub fn expected_posterior_entropy(
    belief: &FaultBelief,
    component: &ComponentId,
    diag: usize,
    catalog: &CommandCatalog,
) -> f64 {
    [DiagOutcome::Positive, DiagOutcome::Negative]
        .into_iter()
        .map(|outcome| {
            let ev = Evidence { component: component.clone(), diagnostic: diag, outcome };
            let p_outcome: f64 = belief.iter().map(|(h, p)| p * evidence_likelihood(catalog, &ev, h)).sum();
            match belief.update(|h| evidence_likelihood(catalog, &ev, h)) {
                Ok(post) if p_outcome > 0.0 => p_outcome * post.entropy(),
                _ => 0.0,
            }
        })
        .sum()
}

fn verdict_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b((?:ERR-5|DIAG-2)\d{3})\b[^\n]*? on ([A-Za-z0-9_.-]+)").expect("verdict pattern"))
}

/// Diagnostic verdicts found in context text, in order of appearance.
pub fn parse_evidence(text: &str, catalog: &CommandCatalog, topology: &Topology) -> Vec<Evidence> {
    verdict_regex()
        .captures_iter(text)
        .filter_map(|c| {
            let (diagnostic, outcome) = catalog.decode(&c[1])?;
            let component = ComponentId::from(&c[2]);
            topology.contains(&component).then_some(Evidence { component, diagnostic, outcome })
        })
        .collect()
}

fn deviation_vector(c: &ComponentState) -> [f64; DIMENSION] {
    let mut d = [0.0; DIMENSION];
    for (g, v) in d.iter_mut().enumerate() {
        *v = c.state_vector[g] - BASELINE[g];
    }
    d
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-component symptom left after removing the displacement that faulty
/// upstream components propagate. Components are visited in dependency
/// order so upstream residuals are known first.
pub fn residuals(state: &[ComponentState], topology: &Topology) -> Result<BTreeMap<ComponentId, [f64; DIMENSION]>> {
    let ranks = topology.dependency_ranks()?;
    let mut order: Vec<&ComponentState> = state.iter().collect();
    order.sort_by_key(|c| (ranks.get(&c.component_id).copied().unwrap_or(0), c.component_id.clone()));
    let mut out: BTreeMap<ComponentId, [f64; DIMENSION]> = BTreeMap::new();
    for c in order {
        let faulty_upstream = topology
            .upstream(&c.component_id)
            .filter(|u| out.get(*u).is_some_and(|r| norm(r) > ANOMALY_THRESHOLD))
            .count() as f64;
        let mut r = deviation_vector(c);
        for (g, o) in PROPAGATION {
            r[g] -= o * faulty_upstream;
        }
        out.insert(c.component_id.clone(), r);
    }
    Ok(out)
}

/// Prior for one component from its residual symptom: each fault is
/// weighted by the eighth power of the cosine between the residual and the
/// fault's symptom offsets; no-fault dominates when the residual is within
/// the anomaly threshold.
pub fn symptom_prior(catalog: &CommandCatalog, component: &ComponentId, residual: &[f64; DIMENSION]) -> FaultBelief {
    let rn = norm(residual);
    let mut weights = BTreeMap::new();
    for spec in catalog.faults() {
        let mut o = [0.0; DIMENSION];
        for (g, v) in spec.offsets {
            o[*g] = *v;
        }
        let cos = if rn > 0.0 { residual.iter().zip(o.iter()).map(|(a, b)| a * b).sum::<f64>() / (rn * norm(&o)) } else { 0.0 };
        weights.insert(Hypothesis::new(component.clone(), Some(spec.kind)), 0.02 + cos.max(0.0).powi(8));
    }
    let no_fault = if rn <= ANOMALY_THRESHOLD { 1.0 } else { 0.02 };
    weights.insert(Hypothesis::new(component.clone(), None), no_fault);
    FaultBelief::new(weights).expect("positive weights")
}

/// C(τ): target components + distinct suspected fault kinds, plus 2 when
/// the suspects span more than one scenario category.
pub fn estimate_complexity(task: &Task) -> f64 {
    let kinds: BTreeSet<FaultKind> = task.suspects.iter().map(|(_, k)| *k).collect();
    let categories: BTreeSet<_> = kinds.iter().map(|k| k.category()).collect();
    let span = if categories.len() > 1 { 2.0 } else { 0.0 };
    task.target_components.len() as f64 + kinds.len() as f64 + span
}

/// Posterior of `(component, fault)` across per-component beliefs.
pub fn posterior_of(beliefs: &BTreeMap<ComponentId, FaultBelief>, component: &ComponentId, fault: FaultKind) -> f64 {
    beliefs
        .get(component)
        .map_or(0.0, |b| b.posterior(&Hypothesis::new(component.clone(), Some(fault))))
}

/// The incident task for the current beliefs: every component with a
/// belief, and every fault hypothesis at or above `threshold`.
pub fn incident_task(id: impl Into<String>, beliefs: &BTreeMap<ComponentId, FaultBelief>, threshold: f64) -> Task {
    let mut task = Task::new(id, TaskKind::Composite).with_targets(beliefs.keys().cloned());
    task.description = "restore every component to its target state".into();
    for (c, b) in beliefs {
        for (h, p) in b.iter() {
            if let (Some(k), true) = (h.fault, p >= threshold) {
                task.suspects.insert((c.clone(), k));
            }
        }
    }
    task
}

/// Splits `task` into atomic subtasks. At or below `theta` the
/// task comes back unchanged. Otherwise: one probe per suspect with a
/// posterior in `[threshold, CONFIRMED)`, one execute per suspect at or
/// above `CONFIRMED`. Priorities grow with the number of components that
/// depend on the target; an execute subtask depends on the execute
/// subtasks of the components its target depends on.
pub fn decompose(
    task: &Task,
    beliefs: &BTreeMap<ComponentId, FaultBelief>,
    topology: &Topology,
    catalog: &CommandCatalog,
    theta: f64,
    threshold: f64,
) -> Result<Vec<Task>> {
    if task.status != crate::model::TaskStatus::Pending {
        return Err(AoiError::Contract(format!("task {} is not pending", task.task_id)));
    }
    topology.dependency_ranks()?;
    if task.target_components.is_empty() || estimate_complexity(task) <= theta {
        return Ok(vec![task.clone()]);
    }
    let priority = |c: &ComponentId, p: f64| 10 * topology.dependent_count(c) as u32 + (9.0 * p).round() as u32;
    let mut out = Vec::new();
    let mut executes: BTreeMap<ComponentId, Vec<TaskId>> = BTreeMap::new();
    for (i, (c, k)) in task.suspects.iter().enumerate() {
        let p = posterior_of(beliefs, c, *k);
        if p >= CONFIRMED {
            let mut t = Task::new(format!("{}.e{i}", task.task_id), TaskKind::Execute)
                .with_suspect(c.clone(), *k)
                .with_priority(priority(c, p));
            t.description = format!("remediate {k} on {c}");
            t.resource_estimate = catalog.fault(*k).remediation.len() as f64;
            executes.entry(c.clone()).or_default().push(t.task_id.clone());
            out.push(t);
        } else if p >= threshold {
            let mut t = Task::new(format!("{}.p{i}", task.task_id), TaskKind::Probe)
                .with_suspect(c.clone(), *k)
                .with_priority(priority(c, p));
            t.description = format!("check {k} on {c}");
            t.resource_estimate = 1.0;
            out.push(t);
        }
    }
    for t in out.iter_mut().filter(|t| t.kind == TaskKind::Execute) {
        let c = t.target_components.iter().next().expect("execute has a target").clone();
        for u in topology.upstream(&c) {
            for dep in executes.get(u).into_iter().flatten() {
                t.depends_on.insert(dep.clone());
            }
        }
    }
    // Dependencies first in the returned order, so the list can be enqueued as is.
    out.sort_by_key(|t| (t.kind == TaskKind::Execute, !t.depends_on.is_empty(), std::cmp::Reverse(t.priority)));
    crate::model::check_acyclic(&out)?;
    Ok(out)
}

/// A runnable probe as the scheduler sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOption {
    pub task_id: TaskId,
    /// Normalized belief entropy in [0, 1].
    pub entropy: f64,
    /// Catalog diagnosticity of the probe's commands in [0, 1].
    pub diagnosticity: f64,
}

/// A runnable execute task as the scheduler sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecuteOption {
    pub task_id: TaskId,
    pub predicted_reduction: f64,
    pub current_distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueueView {
    pub probes: Vec<ProbeOption>,
    pub executes: Vec<ExecuteOption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDecision {
    pub chosen: TaskKind,
    pub task_id: TaskId,
    pub probe_reward: f64,
    pub execute_reward: f64,
    pub lambda: f64,
}

pub fn probe_reward(option: &ProbeOption, lambda: f64) -> f64 {
    lambda * (option.entropy * option.diagnosticity).clamp(0.0, 1.0)
}

pub fn execute_reward(option: &ExecuteOption, lambda: f64) -> f64 {
    let fraction = if option.current_distance > 0.0 {
        (option.predicted_reduction / option.current_distance).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (1.0 - lambda) * fraction
}

fn best<T, F: Fn(&T) -> f64>(items: &[T], score: F) -> Option<(&T, f64)> {
    items.iter().fold(None, |acc, it| {
        let s = score(it);
        match acc {
            Some((_, bs)) if bs >= s => acc,
            _ => Some((it, s)),
        }
    })
}

/// The better of the best probe and the best execute, ties to
/// Execute. With only one kind runnable, that kind. `None` on an empty view.
pub fn schedule(view: &QueueView, lambda: f64) -> Result<Option<ScheduleDecision>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(AoiError::Config(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    let p = best(&view.probes, |o| probe_reward(o, lambda));
    let e = best(&view.executes, |o| execute_reward(o, lambda));
    let decision = |chosen, task_id: &TaskId, pr, er| ScheduleDecision {
        chosen,
        task_id: task_id.clone(),
        probe_reward: pr,
        execute_reward: er,
        lambda,
    };
    Ok(match (p, e) {
        (None, None) => None,
        (Some((po, pr)), None) => Some(decision(TaskKind::Probe, &po.task_id, pr, 0.0)),
        (None, Some((eo, er))) => Some(decision(TaskKind::Execute, &eo.task_id, 0.0, er)),
        (Some((po, pr)), Some((eo, er))) => Some(if pr > er {
            decision(TaskKind::Probe, &po.task_id, pr, er)
        } else {
            decision(TaskKind::Execute, &eo.task_id, pr, er)
        }),
    })
}
