//! Shared domain vocabulary: component and system state vectors, tasks, the
//! weighted operational cost, and the state-distance primitive.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{AoiError, Result};

/// Number of gauges in every component state vector.
pub const DIMENSION: usize = 5;

/// Gauge order inside a state vector.
pub const GAUGE_NAMES: [&str; DIMENSION] = ["cpu", "memory", "latency", "error-rate", "availability"];

pub const CPU: usize = 0;
pub const MEMORY: usize = 1;
pub const LATENCY: usize = 2;
pub const ERROR_RATE: usize = 3;
pub const AVAILABILITY: usize = 4;

/// Gauge values of a healthy component. The target state of every scenario.
pub const BASELINE: [f64; DIMENSION] = [0.30, 0.40, 0.20, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub String);

impl ComponentId {
    pub fn new(id: impl Into<String>) -> Self {
        ComponentId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub String);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.to_string())
    }
}

/// The four incident classes the simulator can produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    ServiceFailure,
    PerformanceDegradation,
    ConfigurationDrift,
    SecurityIncident,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::ServiceFailure,
        Category::PerformanceDegradation,
        Category::ConfigurationDrift,
        Category::SecurityIncident,
    ];
}

/// Fault kinds known to the command catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    ProcessCrash,
    DbConnExhausted,
    DependencyTimeout,
    CpuSaturation,
    MemoryLeak,
    SlowQuery,
    BadConfigPush,
    CertificateExpired,
    FeatureFlagDrift,
    CredentialLeak,
    DdosTraffic,
    UnauthorizedAccess,
}

impl FaultKind {
    pub const ALL: [FaultKind; 12] = [
        FaultKind::ProcessCrash,
        FaultKind::DbConnExhausted,
        FaultKind::DependencyTimeout,
        FaultKind::CpuSaturation,
        FaultKind::MemoryLeak,
        FaultKind::SlowQuery,
        FaultKind::BadConfigPush,
        FaultKind::CertificateExpired,
        FaultKind::FeatureFlagDrift,
        FaultKind::CredentialLeak,
        FaultKind::DdosTraffic,
        FaultKind::UnauthorizedAccess,
    ];

    pub fn category(self) -> Category {
        use FaultKind::*;
        match self {
            ProcessCrash | DbConnExhausted | DependencyTimeout => Category::ServiceFailure,
            CpuSaturation | MemoryLeak | SlowQuery => Category::PerformanceDegradation,
            BadConfigPush | CertificateExpired | FeatureFlagDrift => Category::ConfigurationDrift,
            CredentialLeak | DdosTraffic | UnauthorizedAccess => Category::SecurityIncident,
        }
    }

    pub fn slug(self) -> &'static str {
        use FaultKind::*;
        match self {
            ProcessCrash => "process-crash",
            DbConnExhausted => "db-conn-exhausted",
            DependencyTimeout => "dependency-timeout",
            CpuSaturation => "cpu-saturation",
            MemoryLeak => "memory-leak",
            SlowQuery => "slow-query",
            BadConfigPush => "bad-config-push",
            CertificateExpired => "certificate-expired",
            FeatureFlagDrift => "feature-flag-drift",
            CredentialLeak => "credential-leak",
            DdosTraffic => "ddos-traffic",
            UnauthorizedAccess => "unauthorized-access",
        }
    }

    pub fn from_slug(slug: &str) -> Option<FaultKind> {
        FaultKind::ALL.into_iter().find(|k| k.slug() == slug)
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Health {
    Healthy,
    Degraded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentState {
    pub component_id: ComponentId,
    pub state_vector: Vec<f64>,
    pub health: Health,
    pub active_faults: BTreeSet<FaultKind>,
}

impl ComponentState {
    pub fn healthy(id: impl Into<ComponentId>) -> Self {
        ComponentState {
            component_id: id.into(),
            state_vector: BASELINE.to_vec(),
            health: Health::Healthy,
            active_faults: BTreeSet::new(),
        }
    }

    pub fn check(&self, dimension: usize) -> Result<()> {
        if self.state_vector.len() != dimension {
            return Err(AoiError::Shape(format!(
                "component {} has {} gauges, expected {}",
                self.component_id,
                self.state_vector.len(),
                dimension
            )));
        }
        if self.health == Health::Failed && self.active_faults.is_empty() {
            return Err(AoiError::Contract(format!(
                "component {} is Failed without an active fault",
                self.component_id
            )));
        }
        Ok(())
    }

    /// Euclidean deviation of this component from the healthy baseline.
    pub fn deviation(&self) -> f64 {
        self.state_vector
            .iter()
            .zip(BASELINE.iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<String> for ComponentId {
    fn from(s: String) -> Self {
        ComponentId(s)
    }
}

/// Ground truth (or belief substrate) for every managed component at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub time: f64,
    pub components: Vec<ComponentState>,
}

impl SystemState {
    pub fn new(time: f64, components: Vec<ComponentState>) -> Result<Self> {
        let state = SystemState { time, components };
        state.check()?;
        Ok(state)
    }

    /// All components at baseline, at time zero.
    pub fn healthy<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<ComponentId>,
    {
        SystemState {
            time: 0.0,
            components: ids.into_iter().map(ComponentState::healthy).collect(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.components {
            if !seen.insert(&c.component_id) {
                return Err(AoiError::Duplicate(format!("component {}", c.component_id)));
            }
            c.check(DIMENSION)?;
        }
        Ok(())
    }

    pub fn component(&self, id: &ComponentId) -> Option<&ComponentState> {
        self.components.iter().find(|c| &c.component_id == id)
    }

    pub fn component_mut(&mut self, id: &ComponentId) -> Option<&mut ComponentState> {
        self.components.iter_mut().find(|c| &c.component_id == id)
    }

    pub fn component_ids(&self) -> impl Iterator<Item = &ComponentId> {
        self.components.iter().map(|c| &c.component_id)
    }

    pub fn has_active_faults(&self) -> bool {
        self.components.iter().any(|c| !c.active_faults.is_empty())
    }

    /// Same components, every gauge at baseline, no faults.
    pub fn target(&self) -> SystemState {
        SystemState {
            time: self.time,
            components: self
                .components
                .iter()
                .map(|c| ComponentState::healthy(c.component_id.clone()))
                .collect(),
        }
    }

    /// Ground-truth equality ignoring the clock.
    pub fn same_ground_truth(&self, other: &SystemState) -> bool {
        self.components == other.components
    }
}

/// Euclidean norm of the concatenated component-wise state-vector differences.
pub fn state_distance(current: &SystemState, target: &SystemState) -> Result<f64> {
    if current.components.len() != target.components.len() {
        return Err(AoiError::Shape(format!(
            "component count {} vs {}",
            current.components.len(),
            target.components.len()
        )));
    }
    let mut sum = 0.0;
    for c in &current.components {
        let t = target.component(&c.component_id).ok_or_else(|| {
            AoiError::Shape(format!("component {} missing from target", c.component_id))
        })?;
        if c.state_vector.len() != t.state_vector.len() {
            return Err(AoiError::Shape(format!(
                "component {} dimension {} vs {}",
                c.component_id,
                c.state_vector.len(),
                t.state_vector.len()
            )));
        }
        sum += c
            .state_vector
            .iter()
            .zip(&t.state_vector)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>();
    }
    Ok(sum.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CostWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = CostWeights { alpha, beta, gamma };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite() && *v >= 0.0);
        if !finite || self.alpha + self.beta + self.gamma <= 0.0 {
            return Err(AoiError::Contract(format!(
                "cost weights must be non-negative with a positive sum, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Outcome {
    pub completion_time: f64,
    pub resource_cost: f64,
    pub risk_score: f64,
}

impl Outcome {
    pub fn scaled(self, k: f64) -> Outcome {
        Outcome {
            completion_time: self.completion_time * k,
            resource_cost: self.resource_cost * k,
            risk_score: self.risk_score * k,
        }
    }
}

/// Weighted operational cost `alpha*T + beta*C + gamma*R`.
pub fn cost(outcome: &Outcome, weights: &CostWeights) -> Result<f64> {
    weights.check()?;
    let fields = [outcome.completion_time, outcome.resource_cost, outcome.risk_score];
    if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(AoiError::Contract(format!("outcome fields must be non-negative, got {outcome:?}")));
    }
    Ok(weights.alpha * outcome.completion_time
        + weights.beta * outcome.resource_cost
        + weights.gamma * outcome.risk_score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Probe,
    Execute,
    Composite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Running,
    Done,
    Failed,
}

/// A user goal or one of its atomic subtasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: TaskId,
    pub description: String,
    pub kind: TaskKind,
    pub target_components: BTreeSet<ComponentId>,
    /// Suspected or confirmed (component, fault) pairs this task is about.
    pub suspects: BTreeSet<(ComponentId, FaultKind)>,
    pub priority: u32,
    pub resource_estimate: f64,
    pub depends_on: BTreeSet<TaskId>,
    pub status: TaskStatus,
}

impl Task {
    pub fn new(id: impl Into<String>, kind: TaskKind) -> Self {
        Task {
            task_id: TaskId(id.into()),
            description: String::new(),
            kind,
            target_components: BTreeSet::new(),
            suspects: BTreeSet::new(),
            priority: 0,
            resource_estimate: 0.0,
            depends_on: BTreeSet::new(),
            status: TaskStatus::Pending,
        }
    }

    pub fn with_targets<I, S>(mut self, targets: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<ComponentId>,
    {
        self.target_components = targets.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_suspect(mut self, component: impl Into<ComponentId>, fault: FaultKind) -> Self {
        let component = component.into();
        self.target_components.insert(component.clone());
        self.suspects.insert((component, fault));
        self
    }

    pub fn with_priority(mut self, priority: u32) -> Self {
        self.priority = priority;
        self
    }

    pub fn depending_on(mut self, id: impl Into<String>) -> Self {
        self.depends_on.insert(TaskId(id.into()));
        self
    }
}

/// Checks that `depends_on` induces an acyclic graph. Dependencies on ids
/// outside the set are treated as already satisfied.
pub fn check_acyclic(tasks: &[Task]) -> Result<()> {
    let index: BTreeMap<&TaskId, &Task> = tasks.iter().map(|t| (&t.task_id, t)).collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut mark: BTreeMap<&TaskId, u8> = BTreeMap::new();
    for start in tasks {
        if mark.get(&start.task_id).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(&TaskId, Vec<&TaskId>)> = vec![(&start.task_id, start.depends_on.iter().collect())];
        mark.insert(&start.task_id, 1);
        while let Some((node, pending)) = stack.last_mut() {
            if let Some(next) = pending.pop() {
                let Some(task) = index.get(next) else { continue };
                match mark.get(next).copied().unwrap_or(0) {
                    1 => {
                        return Err(AoiError::Contract(format!(
                            "dependency cycle through tasks {node} and {next}"
                        )))
                    }
                    2 => {}
                    _ => {
                        mark.insert(next, 1);
                        stack.push((next, task.depends_on.iter().collect()));
                    }
                }
            } else {
                mark.insert(node, 2);
                stack.pop();
            }
        }
    }
    Ok(())
}
