//! Stage-wise evaluation.
//!
//! A judge scores every stage of a finished task on a 0–10 scale. The router
//! only consumes the improvement bit between consecutive stages, see [`delta`].
//! Two evaluators are provided: [`SimulatedJudge`], a seeded rubric over the
//! synthetic environment's hidden answers, and [`LlmJudge`], which prompts a
//! served model and parses its structured verdict with [`parse_evaluation`].

use std::collections::BTreeMap;
use std::fmt;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{LlmClient, LlmError};
use crate::orchestrator::{StageTranscript, TaskSpec};
use crate::rng;

pub const MIN_SCORE: f64 = 0.0;
pub const MAX_SCORE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("no JSON object found in evaluator output")]
    NoObject,
    #[error("evaluator object has no usable \"score\" field")]
    MissingScore,
    #[error("evaluator request failed: {0}")]
    Backend(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageQuality {
    Poor,
    Fair,
    Good,
    Excellent,
}

impl StageQuality {
    pub fn from_score(score: f64) -> Self {
        if score < 4.0 {
            StageQuality::Poor
        } else if score < 6.5 {
            StageQuality::Fair
        } else if score < 8.5 {
            StageQuality::Good
        } else {
            StageQuality::Excellent
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "poor" => Some(StageQuality::Poor),
            "fair" => Some(StageQuality::Fair),
            "good" => Some(StageQuality::Good),
            "excellent" => Some(StageQuality::Excellent),
            _ => None,
        }
    }
}

impl fmt::Display for StageQuality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StageQuality::Poor => "poor",
            StageQuality::Fair => "fair",
            StageQuality::Good => "good",
            StageQuality::Excellent => "excellent",
        };
        f.write_str(s)
    }
}

/// One stage's verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEvaluation {
    pub score: f64,
    pub stage_quality: StageQuality,
    pub reasoning: String,
    pub solution_quality: String,
    pub llm_answer_quality: String,
    pub strengths: String,
    pub weaknesses: String,
    pub agent_coordination: String,
}

impl StageEvaluation {
    pub fn with_score(score: f64) -> Self {
        let score = score.clamp(MIN_SCORE, MAX_SCORE);
        Self {
            score,
            stage_quality: StageQuality::from_score(score),
            reasoning: String::new(),
            solution_quality: String::new(),
            llm_answer_quality: String::new(),
            strengths: String::new(),
            weaknesses: String::new(),
            agent_coordination: String::new(),
        }
    }
}

/// Improvement indicator: `true` iff `q_curr` is strictly greater than `q_prev`.
pub fn delta(q_prev: f64, q_curr: f64) -> bool {
    q_curr > q_prev
}

/// Renders an evaluation in the evaluator output schema.
pub fn render(eval: &StageEvaluation) -> String {
    serde_json::to_string_pretty(eval).expect("evaluation serializes")
}

/// Byte spans of every balanced top-level `{...}` in `text`, skipping braces
/// inside JSON strings.
fn object_spans(text: &str) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut spans = Vec::new();
    let mut start = None;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' if depth > 0 => in_string = true,
            b'{' => {
                if depth == 0 {
                    start = Some(i);
                }
                depth += 1;
            }
            b'}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    if let Some(s) = start.take() {
                        spans.push((s, i + 1));
                    }
                }
            }
            _ => {}
        }
    }
    spans
}

fn text_field(obj: &serde_json::Map<String, Value>, key: &str) -> String {
    match obj.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    }
}

fn score_field(obj: &serde_json::Map<String, Value>) -> Option<f64> {
    match obj.get("score")? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|s: &f64| s.is_finite())
}

/// Extracts the evaluator's structured object from free-form output.
///
/// The first balanced object carrying a numeric `score` wins. Scores outside
/// `[0, 10]` are clamped with a warning; a missing or unknown `stage_quality`
/// is derived from the score.
pub fn parse_evaluation(text: &str) -> Result<StageEvaluation, JudgeError> {
    let spans = object_spans(text);
    if spans.is_empty() {
        return Err(JudgeError::NoObject);
    }
    let mut saw_object = false;
    for (s, e) in spans {
        let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(&text[s..e]) else {
            continue;
        };
        saw_object = true;
        let Some(raw) = score_field(&obj) else {
            continue;
        };
        let score = raw.clamp(MIN_SCORE, MAX_SCORE);
        if score != raw {
            warn!("evaluator score {raw} outside [0, 10], clamped to {score}");
        }
        let stage_quality = match obj.get("stage_quality") {
            Some(Value::String(q)) => StageQuality::parse(q).unwrap_or_else(|| StageQuality::from_score(score)),
            _ => StageQuality::from_score(score),
        };
        return Ok(StageEvaluation {
            score,
            stage_quality,
            reasoning: text_field(&obj, "reasoning"),
            solution_quality: text_field(&obj, "solution_quality"),
            llm_answer_quality: text_field(&obj, "llm_answer_quality"),
            strengths: text_field(&obj, "strengths"),
            weaknesses: text_field(&obj, "weaknesses"),
            agent_coordination: text_field(&obj, "agent_coordination"),
        });
    }
    if saw_object {
        Err(JudgeError::MissingScore)
    } else {
        Err(JudgeError::NoObject)
    }
}

/// Scores one stage of a finished task.
pub trait Evaluator: Send + Sync {
    fn evaluate(&self, task: &TaskSpec, transcript: &StageTranscript) -> Result<StageEvaluation, JudgeError>;
}

/// Base scores before noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Rubric {
    pub correct: f64,
    pub partial: f64,
    pub incorrect: f64,
    /// Half-width of the uniform noise added to the base score.
    pub noise: f64,
}

impl Default for Rubric {
    fn default() -> Self {
        Self {
            correct: 9.0,
            partial: 5.5,
            incorrect: 2.0,
            noise: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correctness {
    /// The aggregated answer matches the hidden answer.
    Correct,
    /// The aggregate is wrong but at least one agent answered correctly.
    Partial,
    Incorrect,
}

pub fn grade(transcript: &StageTranscript, hidden_answer: &str) -> Correctness {
    if transcript.aggregate.answer.as_deref() == Some(hidden_answer) {
        Correctness::Correct
    } else if transcript
        .outputs
        .iter()
        .any(|o| o.output.failure.is_none() && o.output.answer == hidden_answer)
    {
        Correctness::Partial
    } else {
        Correctness::Incorrect
    }
}

/// Deterministic rubric judge: base score from correctness plus bounded seeded noise.
pub fn simulated_judge(transcript: &StageTranscript, hidden_answer: &str, rubric: &Rubric, seed: u64) -> StageEvaluation {
    let correctness = grade(transcript, hidden_answer);
    let base = match correctness {
        Correctness::Correct => rubric.correct,
        Correctness::Partial => rubric.partial,
        Correctness::Incorrect => rubric.incorrect,
    };
    let noise = if rubric.noise > 0.0 {
        let mut r = rng::keyed(seed, &[rng::PURPOSE_JUDGE, u64::from(transcript.stage_index)]);
        r.gen_range(-rubric.noise..=rubric.noise)
    } else {
        0.0
    };
    let mut eval = StageEvaluation::with_score(base + noise);
    let agents: Vec<String> = transcript.outputs.iter().map(|o| o.agent.to_string()).collect();
    eval.reasoning = format!("stage {} graded {:?} against the hidden answer", transcript.stage_index, correctness);
    eval.agent_coordination = format!("{} agents contributed: {}", agents.len(), agents.join(", "));
    eval
}

/// [`simulated_judge`] behind the [`Evaluator`] trait. Noise is keyed by the
/// run seed and the task id, so the same stage always gets the same score.
#[derive(Debug, Clone)]
pub struct SimulatedJudge {
    pub rubric: Rubric,
    pub seed: u64,
}

impl SimulatedJudge {
    pub fn new(rubric: Rubric, seed: u64) -> Self {
        Self { rubric, seed }
    }
}

impl Evaluator for SimulatedJudge {
    fn evaluate(&self, task: &TaskSpec, transcript: &StageTranscript) -> Result<StageEvaluation, JudgeError> {
        let seed = rng::mix(self.seed, &[rng::hash_str(&task.task_id)]);
        Ok(simulated_judge(transcript, &task.hidden_answer, &self.rubric, seed))
    }
}

const EVALUATOR_INSTRUCTION: &str = "You are an expert evaluator. Evaluate the overall quality of work done in this stage.";

const INITIAL_STAGE_CRITERIA: &str = "\
1. Problem Understanding:
Did the agent properly understand the problem?

2. Decomposition Quality:
If decomposed, is the breakdown logical and complete?

3. Solution Clarity:
Are the solutions clear and well-structured?

4. LLM Direct Answer Quality:
Is the LLM's direct response accurate and helpful?

5. Foundation:
Did this stage provide good foundation for next stages?";

const INTERMEDIATE_STAGE_CRITERIA: &str = "\
1. Processing Quality:
How well were intermediate tasks solved?

2. Building on Previous:
Did agents effectively use guidance from stage t_1?

3. Task Allocation:
Were tasks appropriately allocated to capable agents?

4. Coherence:
Do the solutions form a coherent middle layer?

5. LLM Answer Consistency:
Do the LLM direct answers align with the integrated solutions?";

const FINAL_STAGE_CRITERIA: &str = "\
1. Refinement Quality:
How well were solutions refined?

2. Integration:
How well do the final solutions integrate all previous work?

3. Completeness:
Is the final solution complete and comprehensive?

4. Excellence:
Does the final work meet high quality standards?

5. LLM Answer Quality:
Are the LLM direct answers comprehensive and accurate?";

const OUTPUT_SCHEMA: &str = r#"{
  "score": <0-10>,
  "stage_quality": "<poor/fair/good/excellent>",
  "reasoning": "<detailed explanation>",
  "solution_quality": "<assessment of the integrated solutions>",
  "llm_answer_quality": "<assessment of the LLM direct answers>",
  "strengths": "<what went well>",
  "weaknesses": "<what could be improved>",
  "agent_coordination": "<how well agents worked together>"
}"#;

/// Name and criteria block for a stage. The first stage uses the initial
/// criteria, the last the final ones, everything between the intermediate ones.
pub fn stage_criteria(stage_index: u32, stage_count: u32) -> (&'static str, &'static str) {
    if stage_index <= 1 {
        ("initial", INITIAL_STAGE_CRITERIA)
    } else if stage_index >= stage_count {
        ("final", FINAL_STAGE_CRITERIA)
    } else {
        ("intermediate", INTERMEDIATE_STAGE_CRITERIA)
    }
}

/// Builds the evaluator prompt for one stage.
pub fn evaluation_prompt(task: &TaskSpec, transcript: &StageTranscript) -> String {
    let (stage_name, criteria) = stage_criteria(transcript.stage_index, transcript.stage_count);
    let node_paths: Vec<String> = transcript
        .outputs
        .iter()
        .map(|o| format!("t{}/{}", transcript.stage_index, o.agent))
        .collect();
    let agents: Vec<String> = transcript.outputs.iter().map(|o| o.agent.to_string()).collect();
    let mut action_counts: BTreeMap<String, usize> = BTreeMap::new();
    for o in &transcript.outputs {
        *action_counts
            .entry(format!("{:?}", o.output.trajectory.action_type))
            .or_default() += 1;
    }
    let action_counts: Vec<String> = action_counts.iter().map(|(k, v)| format!("{k}: {v}")).collect();
    let solutions = match &transcript.aggregate.answer {
        Some(a) => a.clone(),
        None => "(no integrated solution)".into(),
    };
    let direct: Vec<String> = transcript
        .outputs
        .iter()
        .map(|o| match &o.output.failure {
            Some(f) => format!("[{}] FAILED: {f}", o.agent),
            None => format!("[{}] {}", o.agent, o.output.answer),
        })
        .collect();
    format!(
        "{EVALUATOR_INSTRUCTION}\n\nPROBLEM:\n{problem}\n\nSTAGE: {stage} - {stage_name}\n\
         - Number of tasks: {nodes}\n- Task node paths: {paths}\n- Agents involved: {agents}\n\
         - Action types distribution: {actions}\n\n\
         SOLUTIONS PROVIDED (Final integrated solutions):\n{solutions}\n\n\
         DIRECT LLM ANSWERS (Raw LLM responses before processing):\n{direct}\n\n\
         Evaluation criteria:\n{criteria}\n\nRespond with a JSON object of the form:\n{OUTPUT_SCHEMA}\n",
        problem = task.prompt,
        stage = transcript.stage_index,
        nodes = transcript.outputs.len(),
        paths = node_paths.join(", "),
        agents = agents.join(", "),
        actions = action_counts.join(", "),
        direct = direct.join("\n"),
    )
}

/// Evaluator backed by a chat-completion endpoint.
pub struct LlmJudge {
    client: LlmClient,
}

impl LlmJudge {
    pub fn new(client: LlmClient) -> Self {
        Self { client }
    }
}

impl Evaluator for LlmJudge {
    fn evaluate(&self, task: &TaskSpec, transcript: &StageTranscript) -> Result<StageEvaluation, JudgeError> {
        let prompt = evaluation_prompt(task, transcript);
        let exchange = self.client.chat(EVALUATOR_INSTRUCTION, &prompt)?;
        parse_evaluation(&exchange.response)
    }
}
