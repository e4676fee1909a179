//! Agent policies: map a local context to an action.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::llm::{LlmClient, TokenUsage};
use crate::memory::{ActionType, AgentId, Assignment, MemoryPiece, TrajectoryRecord};
use crate::orchestrator::TaskSpec;
use crate::rng;

/// Self-assessed quality of a successful scripted action.
pub const SCRIPTED_SUCCESS_QUALITY: f64 = 9.0;
/// Self-assessed quality of a failed scripted action.
pub const SCRIPTED_FAILURE_QUALITY: f64 = 2.0;

/// A prior-stage output visible to the acting agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborOutput {
    pub agent: AgentId,
    pub stage_index: u32,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedPiece {
    pub piece: MemoryPiece,
    pub similarity: f64,
}

/// Memory handed to the policy: nothing, Top-K E-pool hits, or the agent's
/// latest exploratory piece. Never a mix.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Retrieved {
    #[default]
    None,
    TopK(Vec<RetrievedPiece>),
    Exploratory(MemoryPiece),
}

#[derive(Debug, Clone)]
pub struct LocalContext<'a> {
    pub task: &'a TaskSpec,
    pub stage_index: u32,
    pub stage_count: u32,
    pub agent: AgentId,
    pub role: &'a str,
    pub subtask: String,
    /// Agents active at this stage, in dispatch order.
    pub peers: &'a [AgentId],
    pub neighbor_info: &'a [NeighborOutput],
    pub retrieved: Retrieved,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Guidance {
    /// A reusable retrieved piece shaped the action.
    MemoryGuided,
    /// Retrieval returned hits but none was worth reusing.
    Unguided,
    Exploratory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionOutput {
    pub trajectory: TrajectoryRecord,
    pub answer: String,
    pub commentary: String,
    pub guidance: Guidance,
    /// Quality the policy assigns its own action; `None` defers to the stage score.
    pub self_quality: Option<f64>,
    /// Set when the policy could not act. Failed outputs are ignored by aggregation.
    pub failure: Option<String>,
    pub tokens: Option<TokenUsage>,
}

impl ActionOutput {
    pub fn failed(stage_index: u32, reason: impl Into<String>) -> Self {
        Self {
            trajectory: TrajectoryRecord {
                action_type: ActionType::DirectAnswer,
                payload: String::new(),
                allocation: Vec::new(),
                stage_index,
            },
            answer: String::new(),
            commentary: String::new(),
            guidance: Guidance::Exploratory,
            self_quality: None,
            failure: Some(reason.into()),
            tokens: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }
}

pub trait Policy: Send + Sync {
    fn act(&self, ctx: &LocalContext<'_>) -> ActionOutput;
}

/// Success model for the synthetic environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedPolicy {
    pub guided_success: f64,
    pub unguided_success: f64,
    pub explore_success: f64,
    pub reuse_threshold: f64,
}

impl ScriptedPolicy {
    pub fn from_env(env: &crate::orchestrator::EnvConfig) -> Self {
        Self {
            guided_success: env.guided_success,
            unguided_success: env.unguided_success,
            explore_success: env.explore_success,
            reuse_threshold: env.reuse_threshold,
        }
    }

    fn trajectory(&self, ctx: &LocalContext<'_>, guide: Option<&RetrievedPiece>, answer: &str) -> TrajectoryRecord {
        let action_type = if ctx.stage_index == 1 && ctx.peers.len() > 1 {
            ActionType::Decompose
        } else if ctx.stage_index < ctx.stage_count {
            ActionType::Forward
        } else {
            ActionType::DirectAnswer
        };
        let allocation = if action_type == ActionType::Decompose {
            guide
                .and_then(|g| reusable_allocation(&g.piece, ctx.peers))
                .unwrap_or_else(|| {
                    ctx.peers
                        .iter()
                        .enumerate()
                        .map(|(j, &agent)| Assignment {
                            subtask: format!("part {} of {}", j + 1, ctx.task.task_id),
                            agent,
                        })
                        .collect()
                })
        } else {
            Vec::new()
        };
        TrajectoryRecord {
            action_type,
            payload: answer.to_string(),
            allocation,
            stage_index: ctx.stage_index,
        }
    }
}

/// A stored allocation is a usable coordination prior when it came from a
/// decomposition and assigns only agents that are active now.
pub fn reusable_allocation(piece: &MemoryPiece, peers: &[AgentId]) -> Option<Vec<Assignment>> {
    let t = &piece.trajectory;
    let compatible = t.action_type == ActionType::Decompose
        && !t.allocation.is_empty()
        && t.allocation.iter().all(|a| peers.contains(&a.agent));
    compatible.then(|| t.allocation.clone())
}

impl Policy for ScriptedPolicy {
    fn act(&self, ctx: &LocalContext<'_>) -> ActionOutput {
        let mut r = rng::keyed(
            ctx.seed,
            &[rng::PURPOSE_ACT, ctx.task.index, u64::from(ctx.stage_index), u64::from(ctx.agent.0)],
        );
        let u: f64 = r.gen();
        let (guidance, guide, p) = match &ctx.retrieved {
            Retrieved::TopK(hits) => match hits.iter().find(|h| h.piece.quality >= self.reuse_threshold) {
                Some(h) => (Guidance::MemoryGuided, Some(h), self.guided_success),
                None => (Guidance::Unguided, None, self.unguided_success),
            },
            Retrieved::None | Retrieved::Exploratory(_) => (Guidance::Exploratory, None, self.explore_success),
        };
        let correct = u < p;
        let answer = if correct {
            ctx.task.hidden_answer.clone()
        } else {
            ctx.task.distractor()
        };
        let commentary = match (guidance, guide) {
            (Guidance::MemoryGuided, Some(g)) => {
                format!("followed {} (similarity {:.2})", g.piece.id, g.similarity)
            }
            (Guidance::Unguided, _) => "retrieved pieces were not reusable, answered directly".to_string(),
            _ => "explored without stored guidance".to_string(),
        };
        ActionOutput {
            trajectory: self.trajectory(ctx, guide, &answer),
            answer,
            commentary,
            guidance,
            self_quality: Some(if correct {
                SCRIPTED_SUCCESS_QUALITY
            } else {
                SCRIPTED_FAILURE_QUALITY
            }),
            failure: None,
            tokens: None,
        }
    }
}

fn direct_prompt(problem: &str) -> String {
    format!("Solve this problem:\n{problem}\n\nProvide a clear, direct answer.")
}

fn memory_prompt(problem: &str, fragments: &[RetrievedPiece]) -> String {
    let rendered: Vec<String> = fragments
        .iter()
        .map(|f| {
            format!(
                "- [{}] sim={:.2} quality={:.1}\n  context: {}\n  action: {:?}: {}\n  comment: {}",
                f.piece.id,
                f.similarity,
                f.piece.quality,
                f.piece.context_prototype,
                f.piece.trajectory.action_type,
                f.piece.trajectory.payload,
                f.piece.commentary
            )
        })
        .collect();
    format!(
        "You are solving a new task with help from relevant historical memory fragments.\n\n\
         Current task:\n{problem}\n\n\
         Retrieved Exploitation-Pool fragments:\n{}\n\n\
         Use the retrieved memory only as guidance. Do not copy previous answers directly.\n\
         Adapt useful reasoning patterns, checks, or constraints to the current task.\n\n\
         Please solve the current task and provide a clear final answer.",
        rendered.join("\n")
    )
}

/// Renders the user prompt an [`LlmPolicy`] sends for `ctx`.
pub fn llm_prompt(ctx: &LocalContext<'_>) -> String {
    let mut problem = ctx.subtask.clone();
    if !ctx.neighbor_info.is_empty() {
        problem.push_str("\n\nOutputs from the previous stage:");
        for n in ctx.neighbor_info {
            problem.push_str(&format!("\n[{}] {}", n.agent, n.answer));
        }
    }
    if let Retrieved::Exploratory(p) = &ctx.retrieved {
        problem.push_str(&format!("\n\nYour earlier attempt in this task:\n{}", p.trajectory.payload));
    }
    match &ctx.retrieved {
        Retrieved::TopK(hits) if !hits.is_empty() => memory_prompt(&problem, hits),
        _ => direct_prompt(&problem),
    }
}

/// Policy that asks a served model. Transport or protocol errors become
/// failed outputs.
pub struct LlmPolicy {
    client: LlmClient,
}

impl LlmPolicy {
    pub fn new(client: LlmClient) -> Self {
        Self { client }
    }
}

impl Policy for LlmPolicy {
    fn act(&self, ctx: &LocalContext<'_>) -> ActionOutput {
        let system = format!("You are {}, a smart agent designed to solve problems.", ctx.role);
        let guidance = match &ctx.retrieved {
            Retrieved::TopK(h) if !h.is_empty() => Guidance::MemoryGuided,
            _ => Guidance::Exploratory,
        };
        match self.client.chat(&system, &llm_prompt(ctx)) {
            Ok(x) => {
                let answer = x.response.trim().to_string();
                ActionOutput {
                    trajectory: TrajectoryRecord {
                        action_type: ActionType::DirectAnswer,
                        payload: answer.clone(),
                        allocation: Vec::new(),
                        stage_index: ctx.stage_index,
                    },
                    commentary: format!("{} answered at stage {}", ctx.role, ctx.stage_index),
                    answer,
                    guidance,
                    self_quality: None,
                    failure: None,
                    tokens: Some(x.usage()),
                }
            }
            Err(e) => ActionOutput::failed(ctx.stage_index, e.to_string()),
        }
    }
}
