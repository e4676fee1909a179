//! Stage-structured execution loop.
//!
//! A task runs through a fixed number of stages. At each stage every active
//! agent routes between its pools, retrieves or explores, and acts; outputs
//! are aggregated and become the next stage's neighbor information. Once the
//! last stage finishes the judge scores every stage, router weights move by
//! the stage-to-stage improvement bits in stage order, and every X-pool is
//! consolidated.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedder, EmbeddingError};
use crate::judge::{delta, Evaluator, StageEvaluation};
use crate::llm::TokenUsage;
use crate::memory::{AgentId, DualPoolMemory, MemoryError, MemoryPiece, Origin, DEFAULT_TAU, DEFAULT_TOP_K};
use crate::orchestrator::aggregate::{AgentOutput, Aggregator, StageAggregate};
use crate::orchestrator::policy::{LocalContext, NeighborOutput, Policy, Retrieved, RetrievedPiece};
use crate::orchestrator::TaskSpec;
use crate::rng;
use crate::router::{choose_with_prob, PoolChoice, RouterState, RoutingMode};

pub const DEFAULT_STAGES: u32 = 3;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("a task needs at least one stage")]
    NoStages,
    #[error("no agents configured")]
    NoAgents,
    #[error("stage {0} has no active agents")]
    EmptyStage(u32),
    #[error("stage {stage} schedules agent index {index}, but only {count} agents exist")]
    UnknownAgent { stage: u32, index: usize, count: usize },
    #[error("agent slot {slot} holds memory owned by {owner}")]
    ForeignMemory { slot: AgentId, owner: AgentId },
    #[error("X-pool of {0} not empty after consolidation")]
    Unconsolidated(AgentId),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// An agent: identity, role, policy and private memory.
pub struct AgentSpec {
    pub id: AgentId,
    pub role: String,
    pub policy: Box<dyn Policy>,
    pub memory: DualPoolMemory,
}

impl AgentSpec {
    pub fn new(id: AgentId, role: impl Into<String>, policy: Box<dyn Policy>, router: RouterState) -> Self {
        Self {
            id,
            role: role.into(),
            policy,
            memory: DualPoolMemory::new(id, router),
        }
    }
}

/// Which pool a stage's feedback is credited to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateBasis {
    /// The router's draw, even when an empty retrieval forced exploration.
    #[default]
    Routed,
    /// The pool the agent actually drew on.
    Used,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub stages: u32,
    pub top_k: usize,
    pub tau: f64,
    pub routing: RoutingMode,
    pub update_basis: UpdateBasis,
    /// Agent indices active at each stage. `None` activates every agent at every stage.
    pub schedule: Option<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            stages: DEFAULT_STAGES,
            top_k: DEFAULT_TOP_K,
            tau: DEFAULT_TAU,
            routing: RoutingMode::Online,
            update_basis: UpdateBasis::Routed,
            schedule: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    EPool,
    XPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessOp {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolAccess {
    pub task_index: u64,
    pub stage: u32,
    /// Agent whose execution context performed the access.
    pub actor: AgentId,
    /// Agent owning the pool.
    pub owner: AgentId,
    pub pool: PoolKind,
    pub op: AccessOp,
}

/// Instrumentation of every pool access the engine performs.
#[derive(Debug, Clone, Default)]
pub struct PoolAccessLog {
    entries: Vec<PoolAccess>,
}

impl PoolAccessLog {
    pub fn entries(&self) -> &[PoolAccess] {
        &self.entries
    }

    pub fn cross_agent_reads(&self) -> usize {
        self.entries
            .iter()
            .filter(|a| a.op == AccessOp::Read && a.actor != a.owner)
            .count()
    }

    pub fn cross_agent_accesses(&self) -> usize {
        self.entries.iter().filter(|a| a.actor != a.owner).count()
    }

    fn extend(&mut self, more: Vec<PoolAccess>) {
        self.entries.extend(more);
    }
}

/// Everything that happened at one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTranscript {
    pub stage_index: u32,
    pub stage_count: u32,
    /// In dispatch order.
    pub outputs: Vec<AgentOutput>,
    pub aggregate: StageAggregate,
    /// Ids of exploratory pieces minted at this stage, per agent.
    pub minted: Vec<(AgentId, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterTraceRow {
    pub task_index: u64,
    pub task_id: String,
    pub stage: u32,
    pub agent: AgentId,
    pub routed: PoolChoice,
    pub used: PoolChoice,
    pub alpha: f64,
    /// `None` when either stage of the pair could not be evaluated.
    pub delta: Option<bool>,
    pub w_e_before: f64,
    pub w_e_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub task_id: String,
    pub task_index: u64,
    pub family_id: u32,
    pub final_answer: String,
    pub success: bool,
    pub stage_evaluations: Vec<Option<StageEvaluation>>,
    pub transcripts: Vec<StageTranscript>,
    pub router_trace: Vec<RouterTraceRow>,
    /// Stages whose aggregate failed because every agent failed.
    pub failed_stages: Vec<u32>,
    pub consolidated: usize,
    pub tokens: TokenUsage,
}

impl TaskOutcome {
    pub fn stage_scores(&self) -> Vec<Option<f64>> {
        self.stage_evaluations.iter().map(|e| e.as_ref().map(|e| e.score)).collect()
    }
}

pub struct Engine {
    pub config: EngineConfig,
    embedder: Box<dyn Embedder>,
    judge: Box<dyn Evaluator>,
    aggregator: Box<dyn Aggregator>,
}

impl Engine {
    pub fn new(
        config: EngineConfig,
        embedder: Box<dyn Embedder>,
        judge: Box<dyn Evaluator>,
        aggregator: Box<dyn Aggregator>,
    ) -> Self {
        Self {
            config,
            embedder,
            judge,
            aggregator,
        }
    }

    /// Indices of the agents active at `stage_index`, in dispatch order.
    /// Dispatch is round-robin: task `i` starts at agent `i mod M`.
    pub fn active_agents(&self, stage_index: u32, agent_count: usize, task_index: u64) -> Result<Vec<usize>, EngineError> {
        if agent_count == 0 {
            return Err(EngineError::NoAgents);
        }
        let mut active: Vec<usize> = match &self.config.schedule {
            Some(s) => s.get(stage_index as usize - 1).cloned().unwrap_or_default(),
            None => (0..agent_count).collect(),
        };
        if let Some(&index) = active.iter().find(|&&i| i >= agent_count) {
            return Err(EngineError::UnknownAgent {
                stage: stage_index,
                index,
                count: agent_count,
            });
        }
        active.sort_unstable();
        active.dedup();
        if active.is_empty() {
            return Err(EngineError::EmptyStage(stage_index));
        }
        let start = (task_index % agent_count as u64) as usize;
        active.sort_by_key(|&i| (i + agent_count - start) % agent_count);
        Ok(active)
    }

    fn act_one(
        &self,
        task: &TaskSpec,
        stage_index: u32,
        agent: &mut AgentSpec,
        peers: &[AgentId],
        prior: &[NeighborOutput],
    ) -> Result<(AgentOutput, Option<String>, Vec<PoolAccess>), EngineError> {
        let owner = agent.memory.agent_id();
        if owner != agent.id {
            return Err(EngineError::ForeignMemory { slot: agent.id, owner });
        }
        let access = |pool, op| PoolAccess {
            task_index: task.index,
            stage: stage_index,
            actor: agent.id,
            owner,
            pool,
            op,
        };
        let mut log = Vec::new();
        let alpha = self.config.routing.alpha(&agent.memory.router);
        let mut route_rng = rng::keyed(
            self.config.seed,
            &[rng::PURPOSE_ROUTE, task.index, u64::from(stage_index), u64::from(agent.id.0)],
        );
        let routed = choose_with_prob(alpha, &mut route_rng);
        let subtask = task.stage_subtask(stage_index);
        let query = self.embedder.embed(&subtask)?;

        let mut retrieved = Retrieved::None;
        if routed == PoolChoice::Exploit {
            log.push(access(PoolKind::EPool, AccessOp::Read));
            let hits: Vec<RetrievedPiece> = agent
                .memory
                .retrieve(&query, self.config.top_k, self.config.tau)?
                .into_iter()
                .map(|s| RetrievedPiece {
                    piece: s.piece.clone(),
                    similarity: s.similarity,
                })
                .collect();
            if !hits.is_empty() {
                retrieved = Retrieved::TopK(hits);
            }
        }
        let used = if matches!(retrieved, Retrieved::TopK(_)) {
            PoolChoice::Exploit
        } else {
            log.push(access(PoolKind::XPool, AccessOp::Read));
            if let Some(p) = agent.memory.x_pool().last() {
                retrieved = Retrieved::Exploratory(p.clone());
            }
            PoolChoice::Explore
        };
        let hits = match &retrieved {
            Retrieved::TopK(h) => h.len(),
            _ => 0,
        };

        let ctx = LocalContext {
            task,
            stage_index,
            stage_count: self.config.stages,
            agent: agent.id,
            role: &agent.role,
            subtask: subtask.clone(),
            peers,
            neighbor_info: prior,
            retrieved,
            seed: self.config.seed,
        };
        let output = agent.policy.act(&ctx);

        let mut minted = None;
        if used == PoolChoice::Explore && output.is_ok() {
            let id = format!("{}-t{}-s{}", agent.id, task.index, stage_index);
            agent.memory.add_exploratory(MemoryPiece {
                id: id.clone(),
                context_prototype: subtask,
                context_embedding: query,
                trajectory: output.trajectory.clone(),
                commentary: output.commentary.clone(),
                quality: output.self_quality.unwrap_or(0.0).clamp(0.0, 10.0),
                created_at: task.index,
                origin: Origin::Exploratory,
            })?;
            log.push(access(PoolKind::XPool, AccessOp::Write));
            if output.self_quality.is_none() {
                minted = Some(id);
            }
        }
        Ok((
            AgentOutput {
                agent: agent.id,
                routed,
                used,
                alpha,
                hits,
                output,
            },
            minted,
            log,
        ))
    }

    /// Runs one stage for the agents at `active` (indices into `agents`, in
    /// dispatch order). Agents act in parallel; results are collected in
    /// dispatch order, so the transcript does not depend on scheduling.
    pub fn run_stage(
        &self,
        task: &TaskSpec,
        stage_index: u32,
        agents: &mut [AgentSpec],
        active: &[usize],
        prior: &[NeighborOutput],
        log: &mut PoolAccessLog,
    ) -> Result<StageTranscript, EngineError> {
        if active.is_empty() {
            return Err(EngineError::EmptyStage(stage_index));
        }
        let peers: Vec<AgentId> = active.iter().map(|&i| agents[i].id).collect();
        let mut results: Vec<(usize, Result<_, EngineError>)> = agents
            .par_iter_mut()
            .enumerate()
            .filter_map(|(i, agent)| {
                let pos = active.iter().position(|&a| a == i)?;
                Some((pos, self.act_one(task, stage_index, agent, &peers, prior)))
            })
            .collect();
        results.sort_by_key(|(pos, _)| *pos);

        let mut outputs = Vec::with_capacity(results.len());
        let mut minted = Vec::new();
        for (_, r) in results {
            let (out, pending, accesses) = r?;
            if let Some(id) = pending {
                minted.push((out.agent, id));
            }
            log.extend(accesses);
            outputs.push(out);
        }
        let aggregate = self.aggregator.aggregate(&outputs);
        Ok(StageTranscript {
            stage_index,
            stage_count: self.config.stages,
            outputs,
            aggregate,
            minted,
        })
    }

    /// Full loop for one task: stages, evaluation, router updates, consolidation.
    pub fn run_task(
        &self,
        task: &TaskSpec,
        agents: &mut [AgentSpec],
        log: &mut PoolAccessLog,
    ) -> Result<TaskOutcome, EngineError> {
        if self.config.stages == 0 {
            return Err(EngineError::NoStages);
        }
        let mut transcripts: Vec<StageTranscript> = Vec::new();
        let mut prior: Vec<NeighborOutput> = Vec::new();
        for stage in 1..=self.config.stages {
            let active = self.active_agents(stage, agents.len(), task.index)?;
            let t = self.run_stage(task, stage, agents, &active, &prior, log)?;
            prior = t
                .outputs
                .iter()
                .filter(|o| o.output.is_ok())
                .map(|o| NeighborOutput {
                    agent: o.agent,
                    stage_index: stage,
                    answer: o.output.answer.clone(),
                })
                .collect();
            transcripts.push(t);
        }

        let evaluations: Vec<Option<StageEvaluation>> = transcripts
            .iter()
            .map(|t| match self.judge.evaluate(task, t) {
                Ok(e) => Some(e),
                Err(e) => {
                    warn!("{} stage {}: evaluation failed, skipping its updates: {e}", task.task_id, t.stage_index);
                    None
                }
            })
            .collect();

        let mut trace = Vec::new();
        for s in 1..transcripts.len() {
            let d = match (&evaluations[s - 1], &evaluations[s]) {
                (Some(prev), Some(curr)) => Some(delta(prev.score, curr.score)),
                _ => None,
            };
            for out in &transcripts[s].outputs {
                let agent = agents
                    .iter_mut()
                    .find(|a| a.id == out.agent)
                    .expect("transcript agent exists");
                let before = agent.memory.router;
                let choice = match self.config.update_basis {
                    UpdateBasis::Routed => out.routed,
                    UpdateBasis::Used => out.used,
                };
                if let (Some(d), true) = (d, self.config.routing.learns()) {
                    agent.memory.router = before.update(choice, d);
                }
                trace.push(RouterTraceRow {
                    task_index: task.index,
                    task_id: task.task_id.clone(),
                    stage: transcripts[s].stage_index,
                    agent: out.agent,
                    routed: out.routed,
                    used: out.used,
                    alpha: out.alpha,
                    delta: d,
                    w_e_before: before.w_e,
                    w_e_after: agent.memory.router.w_e,
                });
            }
        }

        for (t, eval) in transcripts.iter().zip(&evaluations) {
            let quality = eval.as_ref().map_or(0.0, |e| e.score);
            for (agent_id, id) in &t.minted {
                let agent = agents.iter_mut().find(|a| a.id == *agent_id).expect("minting agent exists");
                agent.memory.set_exploratory_quality(id, quality)?;
            }
        }

        let mut consolidated = 0;
        for agent in agents.iter_mut() {
            consolidated += agent.memory.consolidate();
            if !agent.memory.x_pool().is_empty() {
                return Err(EngineError::Unconsolidated(agent.id));
            }
            log.extend(vec![PoolAccess {
                task_index: task.index,
                stage: self.config.stages,
                actor: agent.id,
                owner: agent.memory.agent_id(),
                pool: PoolKind::EPool,
                op: AccessOp::Write,
            }]);
        }

        let mut tokens = TokenUsage::default();
        for t in &transcripts {
            for o in &t.outputs {
                if let Some(u) = o.output.tokens {
                    tokens += u;
                }
            }
        }
        let last = transcripts.last().expect("at least one stage");
        let final_answer = last.aggregate.answer.clone().unwrap_or_default();
        Ok(TaskOutcome {
            task_id: task.task_id.clone(),
            task_index: task.index,
            family_id: task.family_id,
            success: final_answer == task.hidden_answer,
            final_answer,
            failed_stages: transcripts
                .iter()
                .filter(|t| t.aggregate.failed())
                .map(|t| t.stage_index)
                .collect(),
            stage_evaluations: evaluations,
            transcripts,
            router_trace: trace,
            consolidated,
            tokens,
        })
    }
}
