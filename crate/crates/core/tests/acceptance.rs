//! Acceptance suite. Each test writes one `criterion N: PASS|FAIL ...` line to
//! stderr, bypassing output capture so the lines show up in plain `cargo test`.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualpool::config::RunConfig;
use dualpool::embedding::{Embedding, HashEmbedder};
use dualpool::experiment::{quarter_rates, run_all, simulate, summarize};
use dualpool::judge::SimulatedJudge;
use dualpool::memory::{retrieve, ActionType, AgentId, MemoryPiece, Origin, TrajectoryRecord};
use dualpool::orchestrator::{task_stream, AgentSpec, Engine, EngineConfig, PoolAccessLog, ScriptedPolicy};
use dualpool::router::{PoolChoice, RouterState, RoutingMode};
use dualpool::stats::paired_t_greater;
use dualpool::theory::{run_reach_suite, run_regret_suite};

fn report(n: u32, pass: bool, detail: &str, elapsed: Duration) {
    let line = format!(
        "criterion {n}: {} {detail} [{:.2}s]\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn examples_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/examples"))
}

fn bundled(name: &str) -> RunConfig {
    RunConfig::load(examples_dir().join(name)).expect("bundled config loads")
}

#[test]
fn criterion_1_router_update_table() {
    let start = Instant::now();
    // (w_e, choice, improved) -> w_e' with increment 0.5, decay 0.5, floor 1.
    let table = [
        (1.0, PoolChoice::Exploit, false, 1.0),
        (1.0, PoolChoice::Exploit, true, 1.5),
        (1.0, PoolChoice::Explore, false, 1.5),
        (1.0, PoolChoice::Explore, true, 1.0),
        (2.0, PoolChoice::Exploit, false, 1.0),
        (2.0, PoolChoice::Exploit, true, 2.5),
        (2.0, PoolChoice::Explore, false, 2.5),
        (2.0, PoolChoice::Explore, true, 1.0),
    ];
    let mut mismatches = Vec::new();
    for (w, choice, improved, expected) in table {
        let next = RouterState::default().with_weight(w).update(choice, improved);
        let alpha = expected / (expected + 1.0);
        if next.w_e != expected || next.w_x != 1.0 || next.selection_prob() != alpha {
            mismatches.push(format!("{w} {choice:?} {improved} -> {}", next.w_e));
        }
    }
    let elapsed = start.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(1);
    report(1, pass, &format!("8/8 cases exact, mismatches {mismatches:?}"), elapsed);
    assert!(pass, "{mismatches:?}");
}

/// Brute force: score everything with a plain dot product, sort the whole
/// corpus by the ranking key, then filter and truncate.
fn oracle(pool: &[MemoryPiece], q: &[f64], k: usize, tau: f64) -> Vec<(String, f64)> {
    let mut all: Vec<(f64, u64, &str)> = pool
        .iter()
        .map(|p| {
            let mut dot = 0.0;
            for (a, b) in q.iter().zip(p.context_embedding.values()) {
                dot += a * b;
            }
            (dot.clamp(-1.0, 1.0), p.created_at, p.id.as_str())
        })
        .collect();
    all.sort_by(|a, b| match b.0.partial_cmp(&a.0).unwrap() {
        Ordering::Equal => a.1.cmp(&b.1).then(a.2.cmp(b.2)),
        o => o,
    });
    all.into_iter()
        .filter(|x| x.0 >= tau)
        .take(k)
        .map(|x| (x.2.to_string(), x.0))
        .collect()
}

fn lattice_unit(r: &mut ChaCha8Rng, dim: usize) -> Embedding {
    // Small integer coordinates make exact similarity ties common.
    loop {
        let v: Vec<f64> = (0..dim).map(|_| f64::from(r.gen_range(-2i32..=2))).collect();
        if let Ok(e) = Embedding::normalized(v) {
            return e;
        }
    }
}

#[test]
fn criterion_2_retrieval_matches_brute_force() {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = 0;
    let mut ties_seen = 0;
    for instance in 0..1000 {
        let dim = r.gen_range(2..=8);
        let n = r.gen_range(0..=1000);
        let pool: Vec<MemoryPiece> = (0..n)
            .map(|i| MemoryPiece {
                id: format!("m{:04}", r.gen_range(0..1_000_000) * 1000 + i),
                context_prototype: String::new(),
                context_embedding: lattice_unit(&mut r, dim),
                trajectory: TrajectoryRecord {
                    action_type: ActionType::DirectAnswer,
                    payload: String::new(),
                    allocation: Vec::new(),
                    stage_index: 1,
                },
                commentary: String::new(),
                quality: 5.0,
                created_at: r.gen_range(0..20),
                origin: Origin::Consolidated,
            })
            .collect();
        let q = lattice_unit(&mut r, dim);
        let k = r.gen_range(1..=12);
        let tau = r.gen_range(-1.0..=1.0);
        let got: Vec<(String, f64)> = retrieve(&pool, &q, k, tau)
            .unwrap()
            .into_iter()
            .map(|s| (s.piece.id.clone(), s.similarity))
            .collect();
        let want = oracle(&pool, q.values(), k, tau);
        if got.windows(2).any(|w| w[0].1 == w[1].1) {
            ties_seen += 1;
        }
        if got != want {
            failures += 1;
            eprintln!("instance {instance}: got {got:?}, want {want:?}");
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && ties_seen > 100 && elapsed < Duration::from_secs(30);
    report(
        2,
        pass,
        &format!("{} / 1000 identical to oracle, {ties_seen} with tied scores", 1000 - failures),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_3_reachability_suite() {
    let start = Instant::now();
    let cfg = bundled("theory.toml").theory.reach;
    assert_eq!((cfg.instances, cfg.max_states, cfg.max_alpha), (100, 200, 0.99));
    let rep = run_reach_suite(&cfg).unwrap();
    let worst_tv = rep.instances.iter().map(|i| i.start_tv).fold(0.0f64, f64::max);
    let bound_ok = rep.instances.iter().all(|i| i.min_entry >= i.bound);
    let elapsed = start.elapsed();
    let pass = rep.pass(&cfg) && bound_ok && worst_tv <= 1e-9 && elapsed < Duration::from_secs(60);
    report(
        3,
        pass,
        &format!(
            "{}/100 instances pass (min entry bound {bound_ok}, max start TV {worst_tv:.1e} <= 1e-9); \
             swap period {:?}; block TV {:.3} >= 0.1",
            rep.instances.iter().filter(|i| i.pass).count(),
            rep.swap.period,
            rep.trapped_tv
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_4_regret() {
    let start = Instant::now();
    let cfg = bundled("theory.toml").theory.regret;
    assert_eq!((cfg.seeds, cfg.horizon, cfg.center), (200, 100_000, 0.75));
    let rep = run_regret_suite(&cfg).unwrap();
    let v = rep.verdicts(&cfg);
    let elapsed = start.elapsed();
    let pass = v.all() && elapsed < Duration::from_secs(300);
    report(
        4,
        pass,
        &format!(
            "(a) tail/mid scaled MSE {:.3} <= 1.5: {}; (b) R(1e5)/R(1e4) {:.3} <= 2: {}; \
             (c) log-fit residual {:.4} <= 0.05: {}; (d) baseline ratio {} and online/baseline {:.2e} <= 0.05: {}",
            rep.mse_ratio(),
            v.mse_no_upward_trend,
            rep.growth_ratio,
            v.log_like_growth,
            rep.fit.relative_residual,
            v.log_fit,
            rep.baseline_growth_ratio,
            rep.regret_fraction,
            v.baseline_linear && v.separation
        ),
        elapsed,
    );
    assert!(pass, "{v:?}");
}

#[test]
fn criterion_5_self_evolution_trend() {
    let start = Instant::now();
    let cfg = bundled("evolution.toml");
    assert_eq!((cfg.env.families, cfg.env.repeats, cfg.replicates), (10, 20, 20));
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for seed in cfg.seeds() {
        let run = simulate(&cfg, RoutingMode::Online, seed).unwrap();
        let (f, l) = quarter_rates(&run.successes());
        first.push(f);
        last.push(l);
    }
    let t = paired_t_greater(&last, &first).unwrap();
    let elapsed = start.elapsed();
    let pass = t.mean_difference > 0.0 && t.p_value < 0.05 && elapsed < Duration::from_secs(120);
    report(
        5,
        pass,
        &format!(
            "last-quarter minus first-quarter success {:+.3} over 20 seeds, one-sided p {:.2e} < 0.05",
            t.mean_difference, t.p_value
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_6_ablation_ordering() {
    let start = Instant::now();
    let cfg = bundled("mixed.toml");
    assert_eq!(cfg.replicates, 20);
    let summary = summarize(&run_all(&cfg).unwrap());
    let online = summary.modes.iter().find(|m| m.mode == "online").unwrap();
    let mut parts = Vec::new();
    let mut not_worse = true;
    let mut significant = 0;
    for fixed in ["fixed-1", "fixed-0", "fixed-0.5"] {
        let m = summary.modes.iter().find(|m| m.mode == fixed).expect("mode ran");
        let c = summary.comparisons.iter().find(|c| c.baseline == fixed).unwrap();
        let t = c.test.unwrap();
        not_worse &= online.mean_success >= m.mean_success;
        if online.mean_success > m.mean_success && t.p_value < 0.05 {
            significant += 1;
        }
        parts.push(format!("{fixed} {:.3} (p {:.1e})", m.mean_success, t.p_value));
    }
    let elapsed = start.elapsed();
    let pass = not_worse && significant >= 2 && elapsed < Duration::from_secs(300);
    report(
        6,
        pass,
        &format!(
            "online {:.3} >= {}; strictly better at p < 0.05 against {significant}/3",
            online.mean_success,
            parts.join(", ")
        ),
        elapsed,
    );
    assert!(pass);
}

#[test]
fn criterion_7_consolidation_and_privacy() {
    let start = Instant::now();
    let cfg = bundled("mixed.toml");
    assert_eq!(cfg.env.task_count(), 200);
    let seed = cfg.seed;
    let engine = Engine::new(
        EngineConfig {
            seed,
            ..EngineConfig::default()
        },
        Box::new(HashEmbedder::default()),
        Box::new(SimulatedJudge::new(cfg.judge.rubric, seed)),
        cfg.agents.aggregation.build(),
    );
    let policy = ScriptedPolicy::from_env(&cfg.env);
    let mut agents: Vec<AgentSpec> = (0..cfg.agents.count)
        .map(|i| AgentSpec::new(AgentId(i), "solver", Box::new(policy), RouterState::default()))
        .collect();
    let mut log = PoolAccessLog::default();
    let mut nonempty_after = 0;
    let mut tasks = 0;
    for task in task_stream(&cfg.env, seed) {
        engine.run_task(&task, &mut agents, &mut log).unwrap();
        tasks += 1;
        nonempty_after += agents.iter().filter(|a| !a.memory.x_pool().is_empty()).count();
    }
    let reads = log.cross_agent_reads();
    let accesses = log.entries().len();
    let elapsed = start.elapsed();
    let pass = tasks == 200
        && nonempty_after == 0
        && reads == 0
        && log.cross_agent_accesses() == 0
        && accesses > 0
        && elapsed < Duration::from_secs(60);
    report(
        7,
        pass,
        &format!(
            "{tasks} tasks: non-empty X-pools after a task {nonempty_after}; cross-agent reads {reads} of {accesses} logged accesses"
        ),
        elapsed,
    );
    assert!(pass);
}

fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_string_lossy().into_owned());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_8_reproducible_from_manifest() {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let config = examples_dir().join("mixed.toml");
    let first = dualpool::cli::run([
        "dualpool",
        "sim",
        "run",
        "--config",
        config.to_str().unwrap(),
        "--seed",
        "31",
        "--out",
        a.to_str().unwrap(),
    ]);
    assert_eq!(first, 0);
    let manifest = a.join("manifest.toml");
    let second = dualpool::cli::run([
        "dualpool",
        "sim",
        "run",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(second, 0);

    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    let csvs: Vec<&String> = files.iter().filter(|f| f.ends_with(".csv")).collect();
    let differing: Vec<&String> = files
        .iter()
        .filter(|f| fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap())
        .collect();
    let elapsed = start.elapsed();
    let pass = csvs.len() == 3 && differing.is_empty();
    report(
        8,
        pass,
        &format!(
            "rerun from manifest: {} CSVs and {} other files, byte-identical except {differing:?}",
            csvs.len(),
            files.len() - csvs.len()
        ),
        elapsed,
    );
    assert!(pass);
}
