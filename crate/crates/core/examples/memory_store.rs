//! Running a few tasks, saving each agent's memory, and reading it back.
//!
//!     cargo run --example memory_store

use dualpool::config::RunConfig;
use dualpool::experiment::simulate;
use dualpool::router::RoutingMode;
use dualpool::store::{load_store, save_store, validate_store};

fn main() {
    let cfg = RunConfig::from_toml(include_str!("smoke.toml")).expect("bundled config");
    let run = simulate(&cfg, RoutingMode::Online, cfg.seed).expect("simulation");
    let dir = std::env::temp_dir().join("dualpool-memory-store-example");
    std::fs::create_dir_all(&dir).unwrap();
    for m in &run.memories {
        let path = dir.join(format!("{}.jsonl", m.agent_id()));
        save_store(m, &path).unwrap();
        let back = load_store(&path).unwrap();
        assert_eq!(&back, m);
        println!(
            "{}: E-pool {}, X-pool {}, w_e {}, issues {}",
            path.display(),
            back.e_pool().len(),
            back.x_pool().len(),
            back.router.w_e,
            validate_store(&path).unwrap().len()
        );
    }
}
