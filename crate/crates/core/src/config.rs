//! TOML run configuration.
//!
//! Every section is optional and falls back to its defaults. Unknown keys are
//! rejected so typos surface instead of silently using a default.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::judge::Rubric;
use crate::llm::EndpointConfig;
use crate::memory::{DEFAULT_TAU, DEFAULT_TOP_K};
use crate::orchestrator::{AggregationRule, EnvConfig, UpdateBasis};
use crate::router::{RoutingMode, DEFAULT_DECAY, DEFAULT_INCREMENT, WEIGHT_FLOOR};
use crate::theory::{ReachConfig, RegretConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("{}", render_issues(.0))]
    Invalid(Vec<ConfigIssue>),
}

/// One validation failure, named by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn render_issues(issues: &[ConfigIssue]) -> String {
    let lines: Vec<String> = issues.iter().map(ToString::to_string).collect();
    format!("invalid configuration:\n  {}", lines.join("\n  "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentsConfig {
    pub count: u32,
    pub stages: u32,
    /// Roles by agent index; missing entries default to "solver".
    pub roles: Vec<String>,
    pub schedule: Option<Vec<Vec<usize>>>,
    pub aggregation: AggregationRule,
}

impl Default for AgentsConfig {
    fn default() -> Self {
        Self {
            count: 3,
            stages: 3,
            roles: Vec::new(),
            schedule: None,
            aggregation: AggregationRule::MajorityVote,
        }
    }
}

impl AgentsConfig {
    pub fn role(&self, index: usize) -> &str {
        self.roles.get(index).map_or("solver", String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouterConfig {
    pub increment: f64,
    pub decay: f64,
    pub floor: f64,
    /// Routing modes to run: `"online"` or `"fixed:<alpha>"`.
    pub modes: Vec<String>,
    pub update_basis: UpdateBasis,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            increment: DEFAULT_INCREMENT,
            decay: DEFAULT_DECAY,
            floor: WEIGHT_FLOOR,
            modes: vec!["online".into()],
            update_basis: UpdateBasis::Routed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub k: usize,
    pub tau: f64,
    pub dimension: usize,
    /// `"hash"` for the built-in embedder, `"remote"` for the `[llm]` endpoint.
    pub embedder: EmbedderKind,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            tau: DEFAULT_TAU,
            dimension: crate::embedding::DEFAULT_DIMENSION,
            embedder: EmbedderKind::Hash,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Simulated,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeConfig {
    pub mode: Backend,
    pub rubric: Rubric,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub mode: Backend,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub reach: ReachConfig,
    pub regret: RegretConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Independent seeds per mode: `seed`, `seed + 1`, ...
    pub replicates: u32,
    pub out_dir: PathBuf,
    pub env: EnvConfig,
    pub agents: AgentsConfig,
    pub router: RouterConfig,
    pub retrieval: RetrievalConfig,
    pub judge: JudgeConfig,
    pub policy: PolicyConfig,
    pub llm: EndpointConfig,
    pub theory: TheoryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 1,
            out_dir: PathBuf::from("out"),
            env: EnvConfig::default(),
            agents: AgentsConfig::default(),
            router: RouterConfig::default(),
            retrieval: RetrievalConfig::default(),
            judge: JudgeConfig::default(),
            policy: PolicyConfig::default(),
            llm: EndpointConfig::default(),
            theory: TheoryConfig::default(),
        }
    }
}

/// Parses `"online"` or `"fixed:<alpha>"`.
pub fn parse_mode(s: &str) -> Result<RoutingMode, String> {
    let s = s.trim();
    if s == "online" {
        return Ok(RoutingMode::Online);
    }
    let alpha = s
        .strip_prefix("fixed:")
        .ok_or_else(|| format!("unknown mode {s:?}, expected \"online\" or \"fixed:<alpha>\""))?
        .trim()
        .parse::<f64>()
        .map_err(|e| format!("bad alpha in {s:?}: {e}"))?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(format!("alpha {alpha} in {s:?} outside [0, 1]"));
    }
    Ok(RoutingMode::Fixed { alpha })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn modes(&self) -> Vec<RoutingMode> {
        self.router
            .modes
            .iter()
            .map(|m| parse_mode(m).expect("validated"))
            .collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..u64::from(self.replicates)).map(|i| self.seed.wrapping_add(i)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, message: String| {
            issues.push(ConfigIssue {
                field: field.to_string(),
                message,
            })
        };
        let prob = |x: f64| (0.0..=1.0).contains(&x);

        if self.replicates == 0 {
            bad("replicates", "must be >= 1".into());
        }
        let e = &self.env;
        if e.families == 0 {
            bad("env.families", "must be >= 1".into());
        }
        for (name, v) in [
            ("env.novel_fraction", e.novel_fraction),
            ("env.guided_success", e.guided_success),
            ("env.unguided_success", e.unguided_success),
            ("env.explore_success", e.explore_success),
        ] {
            if !prob(v) {
                bad(name, format!("{v} is not a probability in [0, 1]"));
            }
        }
        if !(0.0..=10.0).contains(&e.reuse_threshold) {
            bad("env.reuse_threshold", format!("{} outside [0, 10]", e.reuse_threshold));
        }
        if e.task_count() == 0 {
            bad("env.tasks", "workload produces no tasks".into());
        }

        let a = &self.agents;
        if a.count == 0 {
            bad("agents.count", "must be >= 1".into());
        }
        if a.stages == 0 {
            bad("agents.stages", "must be >= 1".into());
        }
        if let Some(s) = &a.schedule {
            if s.len() != a.stages as usize {
                bad("agents.schedule", format!("has {} stages, expected {}", s.len(), a.stages));
            }
            for (i, stage) in s.iter().enumerate() {
                if stage.is_empty() {
                    bad("agents.schedule", format!("stage {} has no active agents", i + 1));
                }
                if let Some(x) = stage.iter().find(|&&x| x >= a.count as usize) {
                    bad("agents.schedule", format!("stage {} names agent {x}, only {} exist", i + 1, a.count));
                }
            }
        }

        let r = &self.router;
        if !(r.increment.is_finite() && r.increment > 0.0) {
            bad("router.increment", format!("{} must be > 0", r.increment));
        }
        if !(r.decay > 0.0 && r.decay < 1.0) {
            bad("router.decay", format!("{} must lie in (0, 1)", r.decay));
        }
        if !(r.floor.is_finite() && r.floor > 0.0) {
            bad("router.floor", format!("{} must be > 0", r.floor));
        }
        if r.modes.is_empty() {
            bad("router.modes", "at least one mode is required".into());
        }
        for m in &r.modes {
            if let Err(msg) = parse_mode(m) {
                bad("router.modes", msg);
            }
        }

        let q = &self.retrieval;
        if q.k == 0 {
            bad("retrieval.k", "must be >= 1".into());
        }
        if !(-1.0..=1.0).contains(&q.tau) {
            bad("retrieval.tau", format!("{} outside [-1, 1]", q.tau));
        }
        if q.dimension == 0 {
            bad("retrieval.dimension", "must be >= 1".into());
        }

        let j = &self.judge.rubric;
        for (name, v) in [
            ("judge.rubric.correct", j.correct),
            ("judge.rubric.partial", j.partial),
            ("judge.rubric.incorrect", j.incorrect),
        ] {
            if !(0.0..=10.0).contains(&v) {
                bad(name, format!("{v} outside [0, 10]"));
            }
        }
        if !(j.noise >= 0.0 && j.noise.is_finite()) {
            bad("judge.rubric.noise", format!("{} must be >= 0", j.noise));
        }

        if let Err(e) = self.llm.validate() {
            bad("llm", e.to_string());
        }

        let t = &self.theory;
        if t.reach.max_states < 2 {
            bad("theory.reach.max_states", "must be >= 2".into());
        }
        if !(0.0..=1.0).contains(&t.reach.max_alpha) {
            bad("theory.reach.max_alpha", format!("{} outside [0, 1]", t.reach.max_alpha));
        }
        if t.regret.seeds == 0 {
            bad("theory.regret.seeds", "must be >= 1".into());
        }
        if t.regret.horizon < 100 {
            bad("theory.regret.horizon", "must be >= 100".into());
        }
        if !(t.regret.mid_start < t.regret.split && t.regret.split <= t.regret.horizon) {
            bad(
                "theory.regret.split",
                "need mid_start < split <= horizon".into(),
            );
        }
        if !prob(t.regret.baseline_alpha) {
            bad("theory.regret.baseline_alpha", format!("{} outside [0, 1]", t.regret.baseline_alpha));
        }
        if !(t.regret.center > 0.5 && t.regret.center < 1.0) {
            bad("theory.regret.center", format!("{} must lie in (0.5, 1)", t.regret.center));
        }

        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }
}
