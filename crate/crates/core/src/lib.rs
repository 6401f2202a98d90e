//! Multi-agent incident remediation: an Observer coordinating Probe and
//! Executor agents over a layered memory, with sliding-window context
//! compression and a deterministic fault-injection simulator to run
//! against.

pub mod compressor;
pub mod config;
pub mod engine;
pub mod error;
pub mod executor;
pub mod llm;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod observer;
pub mod probe;
pub mod safety;
pub mod simenv;

pub use error::{AoiError, Result};
pub use model::{
    cost, state_distance, Category, ComponentId, ComponentState, CostWeights, FaultKind, Health, Outcome,
    SystemState, Task, TaskId, TaskKind, TaskStatus,
};
