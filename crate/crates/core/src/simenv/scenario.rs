//! Scenario files and the bundled scenario corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{AoiError, Result};
use crate::model::{Category, ComponentId, FaultKind};
use crate::safety::{tokenize_script, validate_script, PolicyKind};

use super::catalog::CommandCatalog;
use super::logs::verdict_tags;

/// Components and `[a, b]` edges meaning "a depends on b".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub components: Vec<ComponentId>,
    pub edges: Vec<(ComponentId, ComponentId)>,
}

impl Topology {
    pub fn new(components: &[&str], edges: &[(&str, &str)]) -> Self {
        Topology {
            components: components.iter().map(|c| ComponentId::from(*c)).collect(),
            edges: edges.iter().map(|(a, b)| (ComponentId::from(*a), ComponentId::from(*b))).collect(),
        }
    }

    pub fn contains(&self, c: &ComponentId) -> bool {
        self.components.contains(c)
    }

    /// Components `c` depends on.
    pub fn upstream<'a>(&'a self, c: &'a ComponentId) -> impl Iterator<Item = &'a ComponentId> + 'a {
        self.edges.iter().filter(move |(a, _)| a == c).map(|(_, b)| b)
    }

    /// Components that depend on `c`.
    pub fn dependents<'a>(&'a self, c: &'a ComponentId) -> impl Iterator<Item = &'a ComponentId> + 'a {
        self.edges.iter().filter(move |(_, b)| b == c).map(|(a, _)| a)
    }

    /// Depth of each component in the dependency graph: components with no
    /// upstream have rank 0; a component's rank exceeds that of everything
    /// it depends on. Errors on a cycle.
    pub fn dependency_ranks(&self) -> Result<BTreeMap<ComponentId, usize>> {
        let mut indeg: BTreeMap<&ComponentId, usize> = self.components.iter().map(|c| (c, 0)).collect();
        for (a, b) in &self.edges {
            if !self.contains(a) || !self.contains(b) {
                return Err(AoiError::Scenario(format!("edge {a} -> {b} names an unknown component")));
            }
            *indeg.get_mut(a).unwrap() += 1;
        }
        let mut rank: BTreeMap<ComponentId, usize> = BTreeMap::new();
        let mut ready: Vec<&ComponentId> =
            self.components.iter().filter(|c| indeg[*c] == 0).collect();
        while let Some(c) = ready.pop() {
            let r = self.upstream(c).map(|u| rank[u] + 1).max().unwrap_or(0);
            rank.insert(c.clone(), r);
            for d in self.dependents(c) {
                let e = indeg.get_mut(d).unwrap();
                *e -= 1;
                if *e == 0 {
                    ready.push(d);
                }
            }
        }
        if rank.len() != self.components.len() {
            return Err(AoiError::Decomposition("cyclic component dependency".into()));
        }
        Ok(rank)
    }

    /// Number of components that transitively depend on `c`.
    pub fn dependent_count(&self, c: &ComponentId) -> usize {
        let mut seen = BTreeSet::new();
        let mut stack = vec![c];
        while let Some(x) = stack.pop() {
            for d in self.dependents(x) {
                if seen.insert(d) {
                    stack.push(d);
                }
            }
        }
        seen.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectedFault {
    pub component: ComponentId,
    pub fault: FaultKind,
    pub at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub category: Category,
    pub topology: Topology,
    pub injected_faults: Vec<InjectedFault>,
    pub ground_truth_remediation: Vec<String>,
    pub critical_markers: BTreeSet<String>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self, catalog: &CommandCatalog) -> Result<()> {
        if self.topology.components.is_empty() {
            return Err(AoiError::Scenario(format!("{}: empty topology", self.scenario_id)));
        }
        let unique: BTreeSet<_> = self.topology.components.iter().collect();
        if unique.len() != self.topology.components.len() {
            return Err(AoiError::Scenario(format!("{}: duplicate component", self.scenario_id)));
        }
        self.topology
            .dependency_ranks()
            .map_err(|e| AoiError::Scenario(format!("{}: {e}", self.scenario_id)))?;
        let mut faulted = BTreeSet::new();
        for f in &self.injected_faults {
            if !self.topology.contains(&f.component) {
                return Err(AoiError::Scenario(format!(
                    "{}: fault on unknown component {}",
                    self.scenario_id, f.component
                )));
            }
            if !f.at.is_finite() || f.at < 0.0 {
                return Err(AoiError::Scenario(format!("{}: bad injection time {}", self.scenario_id, f.at)));
            }
            if !faulted.insert(&f.component) {
                return Err(AoiError::Scenario(format!(
                    "{}: more than one fault on {}",
                    self.scenario_id, f.component
                )));
            }
            let _ = catalog.fault(f.fault);
        }
        let cmds = tokenize_script(&self.ground_truth_remediation.join("\n"))?;
        let verdict = validate_script(&cmds, PolicyKind::ExecutorPolicy);
        if !verdict.safe {
            return Err(AoiError::Scenario(format!(
                "{}: ground-truth remediation violates executor policy: {:?}",
                self.scenario_id, verdict.violations
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ScenarioSpec =
            serde_json::from_str(text).map_err(|e| AoiError::Scenario(format!("scenario json: {e}")))?;
        spec.validate(&CommandCatalog::default())?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AoiError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            AoiError::Scenario(m) => AoiError::Scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Builds a spec whose ground truth and markers follow from the catalog.
    pub fn build(
        scenario_id: impl Into<String>,
        category: Category,
        topology: Topology,
        faults: Vec<InjectedFault>,
        seed: u64,
    ) -> Self {
        let catalog = CommandCatalog::default();
        let ranks = topology.dependency_ranks().unwrap_or_default();
        let mut ordered = faults.clone();
        ordered.sort_by_key(|f| (ranks.get(&f.component).copied().unwrap_or(0), f.component.clone()));
        let mut remediation = Vec::new();
        let mut markers = BTreeSet::new();
        for f in &ordered {
            let spec = catalog.fault(f.fault);
            remediation.extend(spec.remediation_for(f.component.as_str()));
            markers.extend(verdict_tags(catalog.diagnostic_for(f.fault), spec.signature));
        }
        ScenarioSpec {
            scenario_id: scenario_id.into(),
            category,
            topology,
            injected_faults: faults,
            ground_truth_remediation: remediation,
            critical_markers: markers,
            seed,
        }
    }
}

/// Reads every `*.json` scenario in `dir`, sorted by file name. Files that
/// fail to parse are returned separately.
/// Files that failed to load, with the reason.
pub type Rejected = Vec<(PathBuf, AoiError)>;

pub fn load_dir(dir: &Path) -> Result<(Vec<ScenarioSpec>, Rejected)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| AoiError::Scenario(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut ok = Vec::new();
    let mut bad = Vec::new();
    for p in paths {
        match ScenarioSpec::load(&p) {
            Ok(s) => ok.push(s),
            Err(e) => bad.push((p, e)),
        }
    }
    Ok((ok, bad))
}

fn topologies() -> Vec<Topology> {
    vec![
        Topology::new(&["web", "api", "db"], &[("web", "api"), ("api", "db")]),
        Topology::new(
            &["gateway", "auth", "orders", "db", "cache"],
            &[("gateway", "auth"), ("gateway", "orders"), ("orders", "db"), ("orders", "cache"), ("auth", "db")],
        ),
        Topology::new(
            &["lb", "web", "search", "queue", "worker", "storage"],
            &[("lb", "web"), ("web", "search"), ("web", "queue"), ("worker", "queue"), ("worker", "storage"), ("search", "storage")],
        ),
    ]
}

/// The bundled corpus: 12 scenarios per category (nine single-fault, three
/// cascades) plus two cross-category cascades, 50 in total.
pub fn bundled_corpus() -> Vec<ScenarioSpec> {
    let tops = topologies();
    let mut out = Vec::new();
    let mut seed = 1000u64;
    for (ci, cat) in Category::ALL.into_iter().enumerate() {
        let kinds: Vec<FaultKind> = FaultKind::ALL.into_iter().filter(|k| k.category() == cat).collect();
        let slug = match cat {
            Category::ServiceFailure => "sf",
            Category::PerformanceDegradation => "pd",
            Category::ConfigurationDrift => "cd",
            Category::SecurityIncident => "si",
        };
        let mut n = 0;
        for (ti, top) in tops.iter().enumerate() {
            for (ki, kind) in kinds.iter().enumerate() {
                n += 1;
                seed += 7;
                // Rotate the faulty component so every position gets exercised.
                let comp = top.components[(ki + ti + ci) % top.components.len()].clone();
                let faults = vec![InjectedFault { component: comp, fault: *kind, at: 10.0 * (ki as f64 + 1.0) }];
                out.push(ScenarioSpec::build(format!("{slug}-{n:02}"), cat, top.clone(), faults, seed));
            }
        }
        for (j, top) in tops.iter().enumerate() {
            n += 1;
            seed += 7;
            // Root fault on a component something depends on, plus a second
            // fault of the same category on one of its dependents.
            let (dep, root) = top.edges[(j + ci) % top.edges.len()].clone();
            let faults = vec![
                InjectedFault { component: root, fault: kinds[j % 3], at: 10.0 },
                InjectedFault { component: dep, fault: kinds[(j + 1) % 3], at: 40.0 },
            ];
            out.push(ScenarioSpec::build(format!("{slug}-{n:02}"), cat, top.clone(), faults, seed));
        }
    }
    let top = &tops[1];
    out.push(ScenarioSpec::build(
        "cascade-01",
        Category::ServiceFailure,
        top.clone(),
        vec![
            InjectedFault { component: "db".into(), fault: FaultKind::DbConnExhausted, at: 10.0 },
            InjectedFault { component: "orders".into(), fault: FaultKind::MemoryLeak, at: 30.0 },
            InjectedFault { component: "gateway".into(), fault: FaultKind::BadConfigPush, at: 60.0 },
        ],
        seed + 7,
    ));
    let top = &tops[2];
    out.push(ScenarioSpec::build(
        "cascade-02",
        Category::SecurityIncident,
        top.clone(),
        vec![
            InjectedFault { component: "storage".into(), fault: FaultKind::CredentialLeak, at: 10.0 },
            InjectedFault { component: "search".into(), fault: FaultKind::SlowQuery, at: 25.0 },
        ],
        seed + 14,
    ));
    out
}

/// Writes the bundled corpus as `<scenario_id>.json` files.
pub fn write_corpus(dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let corpus = bundled_corpus();
    for s in &corpus {
        std::fs::write(dir.join(format!("{}.json", s.scenario_id)), s.to_json() + "\n")?;
    }
    Ok(corpus.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_shape() {
        let corpus = bundled_corpus();
        assert_eq!(corpus.len(), 50);
        let catalog = CommandCatalog::default();
        for c in Category::ALL {
            assert!(corpus.iter().filter(|s| s.category == c).count() >= 12);
        }
        assert!(corpus.iter().filter(|s| s.injected_faults.len() > 1).count() >= 12);
        let ids: BTreeSet<_> = corpus.iter().map(|s| &s.scenario_id).collect();
        assert_eq!(ids.len(), 50);
        for s in &corpus {
            s.validate(&catalog).unwrap();
        }
    }

    #[test]
    fn json_round_trip() {
        let s = &bundled_corpus()[0];
        assert_eq!(&ScenarioSpec::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn ranks_and_cycles() {
        let t = Topology::new(&["a", "b", "c"], &[("a", "b"), ("b", "c")]);
        let r = t.dependency_ranks().unwrap();
        assert_eq!((r[&"c".into()], r[&"b".into()], r[&"a".into()]), (0, 1, 2));
        assert_eq!(t.dependent_count(&"c".into()), 2);
        let cyc = Topology::new(&["a", "b"], &[("a", "b"), ("b", "a")]);
        assert!(matches!(cyc.dependency_ranks(), Err(AoiError::Decomposition(_))));
    }

    #[test]
    fn unknown_fault_kind_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(&bundled_corpus()[0].to_json()).unwrap();
        v["injected_faults"][0]["fault"] = "disk-full".into();
        assert!(ScenarioSpec::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn unsafe_ground_truth_rejected() {
        let mut s = bundled_corpus()[0].clone();
        s.ground_truth_remediation.push("DROP TABLE sessions".into());
        assert!(s.validate(&CommandCatalog::default()).is_err());
    }

    #[test]
    fn cascade_remediation_is_dependency_ordered() {
        let s = bundled_corpus().into_iter().find(|s| s.scenario_id == "cascade-01").unwrap();
        let pos = |needle: &str| s.ground_truth_remediation.iter().position(|c| c.ends_with(needle)).unwrap();
        assert!(pos("pool db") < pos("memory-limit orders"));
        assert!(pos("memory-limit orders") < pos("service gateway"));
    }
}
