//! Agents with private dual-pool memory: a persistent pool of consolidated
//! experience and a per-task pool of fresh exploration, with an online router
//! choosing between them from stage-wise judge feedback.
//!
//! Most capabilities have a runnable program under `examples/`.

pub mod cli;
pub mod config;
pub mod embedding;
pub mod experiment;
pub mod judge;
pub mod llm;
pub mod memory;
pub mod orchestrator;
pub mod rng;
pub mod router;
pub mod stats;
pub mod store;
pub mod theory;
