//! Multi-agent execution over dual-pool memory, plus a synthetic environment.

pub mod aggregate;
pub mod engine;
pub mod policy;
pub mod task;

pub use aggregate::{AgentOutput, AggregationRule, Aggregator, Integrator, MajorityVote, StageAggregate};
pub use engine::{
    AccessOp, AgentSpec, Engine, EngineConfig, EngineError, PoolAccess, PoolAccessLog, PoolKind, RouterTraceRow,
    StageTranscript, TaskOutcome, UpdateBasis,
};
pub use policy::{
    ActionOutput, Guidance, LlmPolicy, LocalContext, NeighborOutput, Policy, Retrieved, RetrievedPiece, ScriptedPolicy,
};
pub use task::{generate_task, task_stream, EnvConfig, TaskSpec, Workload};
