//! Deterministic simulated infrastructure.

pub mod catalog;
pub mod corpus;
pub mod env;
pub mod logs;
pub mod scenario;

pub use catalog::{CommandCatalog, DiagOutcome, Diagnostic, FaultSpec};
pub use env::{Environment, Evidence, SimEnv, StepOutcome};
pub use scenario::{bundled_corpus, InjectedFault, ScenarioSpec, Topology};
