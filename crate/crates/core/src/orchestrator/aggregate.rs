//! Stage aggregation rules.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::memory::AgentId;
use crate::orchestrator::policy::ActionOutput;
use crate::router::PoolChoice;

/// One agent's contribution to a stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutput {
    pub agent: AgentId,
    /// Pool the router picked.
    pub routed: PoolChoice,
    /// Pool actually used after an empty retrieval fell back to exploration.
    pub used: PoolChoice,
    pub alpha: f64,
    pub hits: usize,
    pub output: ActionOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageAggregate {
    /// Selected answer; `None` when every agent failed.
    pub answer: Option<String>,
    /// Combined text shown to the next stage and to the judge.
    pub text: String,
}

impl StageAggregate {
    pub fn failed(&self) -> bool {
        self.answer.is_none()
    }
}

pub trait Aggregator: Send + Sync {
    /// `outputs` arrive in dispatch order.
    fn aggregate(&self, outputs: &[AgentOutput]) -> StageAggregate;
}

fn combined_text(outputs: &[AgentOutput]) -> String {
    outputs
        .iter()
        .filter(|o| o.output.is_ok())
        .map(|o| format!("[{}] {}", o.agent, o.output.answer))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Plurality vote over successful answers. Ties go to the answer given first
/// in dispatch order.
#[derive(Debug, Clone, Copy, Default)]
pub struct MajorityVote;

impl Aggregator for MajorityVote {
    fn aggregate(&self, outputs: &[AgentOutput]) -> StageAggregate {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        for (pos, o) in outputs.iter().enumerate().filter(|(_, o)| o.output.is_ok()) {
            counts.entry(o.output.answer.as_str()).or_insert((0, pos)).0 += 1;
        }
        let answer = counts
            .into_iter()
            .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
            .map(|(a, _)| a.to_string());
        StageAggregate {
            answer,
            text: combined_text(outputs),
        }
    }
}

/// A designated integrator concatenates all outputs and selects its own
/// answer, or the first successful one if it failed. Without a designated
/// agent the last agent in dispatch order integrates.
#[derive(Debug, Clone, Copy, Default)]
pub struct Integrator {
    pub designated: Option<AgentId>,
}

impl Aggregator for Integrator {
    fn aggregate(&self, outputs: &[AgentOutput]) -> StageAggregate {
        let integrator = self.designated.or_else(|| outputs.last().map(|o| o.agent));
        let own = outputs
            .iter()
            .find(|o| Some(o.agent) == integrator && o.output.is_ok());
        let answer = own
            .or_else(|| outputs.iter().find(|o| o.output.is_ok()))
            .map(|o| o.output.answer.clone());
        StageAggregate {
            answer,
            text: combined_text(outputs),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationRule {
    #[default]
    MajorityVote,
    Integrator,
}

impl AggregationRule {
    pub fn build(self) -> Box<dyn Aggregator> {
        match self {
            AggregationRule::MajorityVote => Box::new(MajorityVote),
            AggregationRule::Integrator => Box::new(Integrator::default()),
        }
    }
}
