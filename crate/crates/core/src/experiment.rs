//! Seeded simulation runs over a task stream, and their on-disk outputs.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{Backend, EmbedderKind, RunConfig};
use crate::embedding::{Embedder, HashEmbedder};
use crate::judge::{Evaluator, LlmJudge, SimulatedJudge};
use crate::llm::{LlmClient, LlmError, RemoteEmbedder, TokenUsage};
use crate::memory::{AgentId, DualPoolMemory};
use crate::orchestrator::{
    AgentSpec, Engine, EngineConfig, EngineError, LlmPolicy, Policy, PoolAccessLog, ScriptedPolicy, task_stream,
};
use crate::router::{RouterState, RoutingMode};
use crate::stats::{mean, paired_t_greater, PairedTest};
use crate::store::{save_store, StoreError};

/// Bumped whenever a CSV column changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("X-pool of {agent} holds {size} pieces after task {task}")]
    XPoolNotEmpty { agent: AgentId, task: String, size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRow {
    pub mode: String,
    pub seed: u64,
    pub task_index: u64,
    pub task_id: String,
    pub family_id: u32,
    pub success: bool,
    pub final_answer: String,
    /// Judge scores by stage, `;`-separated; empty for unevaluated stages.
    pub stage_scores: String,
    pub failed_stages: u32,
    pub consolidated: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub mode: String,
    pub seed: u64,
    pub task_index: u64,
    pub task_id: String,
    pub stage: u32,
    pub agent: u32,
    pub routed: &'static str,
    pub used: &'static str,
    pub alpha: f64,
    /// Empty when the stage pair was not evaluated.
    pub delta: Option<u8>,
    pub w_e_before: f64,
    pub w_e_after: f64,
}

/// Router state and pool size of one agent after one task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightRow {
    pub mode: String,
    pub seed: u64,
    pub task_index: u64,
    pub agent: u32,
    pub w_e: f64,
    pub alpha: f64,
    pub e_pool: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub mode: RoutingMode,
    pub seed: u64,
    pub tasks: Vec<TaskRow>,
    pub trace: Vec<TraceRow>,
    pub weights: Vec<WeightRow>,
    pub memories: Vec<DualPoolMemory>,
    pub access_count: usize,
    pub cross_agent_reads: usize,
    pub tokens: TokenUsage,
}

impl RunOutcome {
    pub fn successes(&self) -> Vec<bool> {
        self.tasks.iter().map(|t| t.success).collect()
    }

    pub fn success_rate(&self) -> f64 {
        rate(&self.successes())
    }
}

fn rate(xs: &[bool]) -> f64 {
    xs.iter().filter(|&&s| s).count() as f64 / xs.len() as f64
}

/// Success rates over the first and last quarter of a task sequence.
pub fn quarter_rates(successes: &[bool]) -> (f64, f64) {
    let q = (successes.len() / 4).max(1);
    (rate(&successes[..q]), rate(&successes[successes.len() - q..]))
}

fn build_agents(cfg: &RunConfig, client: Option<&LlmClient>) -> Vec<AgentSpec> {
    let router = RouterState::new(cfg.router.increment, cfg.router.decay, cfg.router.floor);
    (0..cfg.agents.count)
        .map(|i| {
            let policy: Box<dyn Policy> = match (cfg.policy.mode, client) {
                (Backend::Llm, Some(c)) => Box::new(LlmPolicy::new(c.clone())),
                _ => Box::new(ScriptedPolicy::from_env(&cfg.env)),
            };
            AgentSpec::new(AgentId(i), cfg.agents.role(i as usize), policy, router)
        })
        .collect()
}

fn build_engine(cfg: &RunConfig, mode: RoutingMode, seed: u64, client: Option<&LlmClient>) -> Result<Engine, LlmError> {
    let embedder: Box<dyn Embedder> = match (cfg.retrieval.embedder, client) {
        (EmbedderKind::Remote, Some(c)) => Box::new(RemoteEmbedder::new(c.clone())?),
        _ => Box::new(HashEmbedder::new(cfg.retrieval.dimension)),
    };
    let judge: Box<dyn Evaluator> = match (cfg.judge.mode, client) {
        (Backend::Llm, Some(c)) => Box::new(LlmJudge::new(c.clone())),
        _ => Box::new(SimulatedJudge::new(cfg.judge.rubric, seed)),
    };
    let config = EngineConfig {
        stages: cfg.agents.stages,
        top_k: cfg.retrieval.k,
        tau: cfg.retrieval.tau,
        routing: mode,
        update_basis: cfg.router.update_basis,
        schedule: cfg.agents.schedule.clone(),
        seed,
    };
    Ok(Engine::new(config, embedder, judge, cfg.agents.aggregation.build()))
}

fn needs_client(cfg: &RunConfig) -> bool {
    cfg.policy.mode == Backend::Llm || cfg.judge.mode == Backend::Llm || cfg.retrieval.embedder == EmbedderKind::Remote
}

/// One full pass over the configured task stream under one routing mode and seed.
pub fn simulate(cfg: &RunConfig, mode: RoutingMode, seed: u64) -> Result<RunOutcome, ExperimentError> {
    let client = if needs_client(cfg) {
        Some(LlmClient::new(cfg.llm.clone().with_env_overrides())?)
    } else {
        None
    };
    let engine = build_engine(cfg, mode, seed, client.as_ref())?;
    let mut agents = build_agents(cfg, client.as_ref());
    let mut log = PoolAccessLog::default();
    let label = mode.label();

    let mut out = RunOutcome {
        mode,
        seed,
        tasks: Vec::new(),
        trace: Vec::new(),
        weights: Vec::new(),
        memories: Vec::new(),
        access_count: 0,
        cross_agent_reads: 0,
        tokens: TokenUsage::default(),
    };
    for task in task_stream(&cfg.env, seed) {
        let o = engine.run_task(&task, &mut agents, &mut log)?;
        for a in &agents {
            let size = a.memory.x_pool().len();
            if size != 0 {
                return Err(ExperimentError::XPoolNotEmpty {
                    agent: a.id,
                    task: task.task_id.clone(),
                    size,
                });
            }
            out.weights.push(WeightRow {
                mode: label.clone(),
                seed,
                task_index: task.index,
                agent: a.id.0,
                w_e: a.memory.router.w_e,
                alpha: mode.alpha(&a.memory.router),
                e_pool: a.memory.e_pool().len(),
            });
        }
        out.trace.extend(o.router_trace.iter().map(|r| TraceRow {
            mode: label.clone(),
            seed,
            task_index: r.task_index,
            task_id: r.task_id.clone(),
            stage: r.stage,
            agent: r.agent.0,
            routed: r.routed.as_str(),
            used: r.used.as_str(),
            alpha: r.alpha,
            delta: r.delta.map(u8::from),
            w_e_before: r.w_e_before,
            w_e_after: r.w_e_after,
        }));
        let scores: Vec<String> = o
            .stage_scores()
            .iter()
            .map(|s| s.map(|s| s.to_string()).unwrap_or_default())
            .collect();
        out.tokens += o.tokens;
        out.tasks.push(TaskRow {
            mode: label.clone(),
            seed,
            task_index: o.task_index,
            task_id: o.task_id,
            family_id: o.family_id,
            success: o.success,
            final_answer: o.final_answer,
            stage_scores: scores.join(";"),
            failed_stages: o.failed_stages.len() as u32,
            consolidated: o.consolidated,
            prompt_tokens: o.tokens.prompt,
            completion_tokens: o.tokens.completion,
        });
    }
    out.access_count = log.entries().len();
    out.cross_agent_reads = log.cross_agent_reads();
    out.memories = agents.into_iter().map(|a| a.memory).collect();
    Ok(out)
}

/// Every (mode, seed) pair of the config, in config order.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<RunOutcome>, ExperimentError> {
    let jobs: Vec<(RoutingMode, u64)> = cfg
        .modes()
        .into_iter()
        .flat_map(|m| cfg.seeds().into_iter().map(move |s| (m, s)))
        .collect();
    jobs.into_par_iter().map(|(m, s)| simulate(cfg, m, s)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: String,
    pub seeds: Vec<u64>,
    pub success_rates: Vec<f64>,
    pub mean_success: f64,
    pub first_quarter: f64,
    pub last_quarter: f64,
    /// Last quarter against first quarter, paired over seeds.
    pub trend_test: Option<PairedTest>,
    /// `(tasks seen, mean cumulative accuracy)` after each task.
    pub cumulative_accuracy: Vec<(u64, f64)>,
    pub mean_final_w_e: f64,
    pub mean_e_pool: f64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cross_agent_reads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub mode: String,
    pub baseline: String,
    pub test: Option<PairedTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub csv_schema_version: u32,
    pub tasks_per_run: usize,
    pub modes: Vec<ModeSummary>,
    /// Online routing against each fixed mode, paired over seeds.
    pub comparisons: Vec<Comparison>,
}

pub fn summarize(runs: &[RunOutcome]) -> RunSummary {
    let mut labels: Vec<String> = Vec::new();
    for r in runs {
        let l = r.mode.label();
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let modes: Vec<ModeSummary> = labels
        .iter()
        .map(|label| {
            let rs: Vec<&RunOutcome> = runs.iter().filter(|r| &r.mode.label() == label).collect();
            let n_tasks = rs.iter().map(|r| r.tasks.len()).min().unwrap_or(0);
            let quarters: Vec<(f64, f64)> = rs.iter().map(|r| quarter_rates(&r.successes())).collect();
            let firsts: Vec<f64> = quarters.iter().map(|q| q.0).collect();
            let lasts: Vec<f64> = quarters.iter().map(|q| q.1).collect();
            let cumulative_accuracy = (0..n_tasks)
                .map(|i| {
                    let acc: Vec<f64> = rs.iter().map(|r| rate(&r.successes()[..=i])).collect();
                    (i as u64 + 1, mean(&acc))
                })
                .collect();
            let final_w: Vec<f64> = rs
                .iter()
                .flat_map(|r| r.memories.iter().map(|m| m.router.w_e))
                .collect();
            let pools: Vec<f64> = rs
                .iter()
                .flat_map(|r| r.memories.iter().map(|m| m.e_pool().len() as f64))
                .collect();
            let rates: Vec<f64> = rs.iter().map(|r| r.success_rate()).collect();
            ModeSummary {
                mode: label.clone(),
                seeds: rs.iter().map(|r| r.seed).collect(),
                mean_success: mean(&rates),
                success_rates: rates,
                first_quarter: mean(&firsts),
                last_quarter: mean(&lasts),
                trend_test: paired_t_greater(&lasts, &firsts),
                cumulative_accuracy,
                mean_final_w_e: mean(&final_w),
                mean_e_pool: mean(&pools),
                prompt_tokens: rs.iter().map(|r| r.tokens.prompt).sum(),
                completion_tokens: rs.iter().map(|r| r.tokens.completion).sum(),
                cross_agent_reads: rs.iter().map(|r| r.cross_agent_reads).sum(),
            }
        })
        .collect();

    let mut comparisons = Vec::new();
    if let Some(online) = modes.iter().find(|m| m.mode == "online") {
        for other in modes.iter().filter(|m| m.mode != "online") {
            let test = (online.seeds == other.seeds)
                .then(|| paired_t_greater(&online.success_rates, &other.success_rates))
                .flatten();
            comparisons.push(Comparison {
                mode: online.mode.clone(),
                baseline: other.mode.clone(),
                test,
            });
        }
    }
    RunSummary {
        csv_schema_version: CSV_SCHEMA_VERSION,
        tasks_per_run: runs.first().map_or(0, |r| r.tasks.len()),
        modes,
        comparisons,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), ExperimentError> {
    let csv_err = |source| ExperimentError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub const MANIFEST_HEADER: &str = "# dualpool run manifest: the effective configuration of this run.\n\
# Reproduce with: dualpool sim run --config manifest.toml --out <dir>\n\n";

/// Writes CSVs, `summary.json`, `manifest.toml` and one memory store per agent and run.
pub fn write_outputs(cfg: &RunConfig, runs: &[RunOutcome], out: &Path) -> Result<RunSummary, ExperimentError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    write_csv(&out.join("tasks.csv"), runs.iter().flat_map(|r| &r.tasks))?;
    write_csv(&out.join("router_trace.csv"), runs.iter().flat_map(|r| &r.trace))?;
    write_csv(&out.join("weights.csv"), runs.iter().flat_map(|r| &r.weights))?;

    let summary = summarize(runs);
    let path = out.join("summary.json");
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;

    let path = out.join("manifest.toml");
    fs::write(&path, format!("{MANIFEST_HEADER}{}", cfg.to_toml())).map_err(io_err(&path))?;

    for r in runs {
        let dir = out.join("memory").join(format!("{}-seed{}", r.mode.label(), r.seed));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for m in &r.memories {
            save_store(m, dir.join(format!("{}.jsonl", m.agent_id())))?;
        }
    }
    Ok(summary)
}
