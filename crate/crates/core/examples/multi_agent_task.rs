//! One task through three agents and three stages, printing each stage's
//! routing, answers and judge score.
//!
//!     cargo run --example multi_agent_task

use dualpool::embedding::HashEmbedder;
use dualpool::judge::{Rubric, SimulatedJudge};
use dualpool::memory::AgentId;
use dualpool::orchestrator::{
    task_stream, AgentSpec, Engine, EngineConfig, EnvConfig, MajorityVote, PoolAccessLog, ScriptedPolicy,
};
use dualpool::router::RouterState;

fn main() {
    let env = EnvConfig {
        families: 2,
        repeats: 3,
        ..EnvConfig::default()
    };
    let config = EngineConfig {
        seed: 5,
        ..EngineConfig::default()
    };
    let engine = Engine::new(
        config,
        Box::new(HashEmbedder::default()),
        Box::new(SimulatedJudge::new(Rubric::default(), 5)),
        Box::new(MajorityVote),
    );
    let policy = ScriptedPolicy::from_env(&env);
    let mut agents: Vec<AgentSpec> = ["planner", "solver", "checker"]
        .iter()
        .enumerate()
        .map(|(i, role)| AgentSpec::new(AgentId(i as u32), *role, Box::new(policy), RouterState::default()))
        .collect();
    let mut log = PoolAccessLog::default();

    for task in task_stream(&env, 5) {
        let out = engine.run_task(&task, &mut agents, &mut log).unwrap();
        println!("{} (family {}): success {}", out.task_id, out.family_id, out.success);
        for (t, score) in out.transcripts.iter().zip(out.stage_scores()) {
            let routes: Vec<String> = t
                .outputs
                .iter()
                .map(|o| format!("{}:{}/{}", o.agent, o.routed.as_str(), o.used.as_str()))
                .collect();
            println!(
                "  stage {}: {}  -> {:?}  score {:?}",
                t.stage_index,
                routes.join(" "),
                t.aggregate.answer,
                score
            );
        }
    }
    for a in &agents {
        println!("{} E-pool {} w_e {}", a.id, a.memory.e_pool().len(), a.memory.router.w_e);
    }
    println!("cross-agent reads: {}", log.cross_agent_reads());
}
