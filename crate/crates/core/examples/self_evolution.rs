//! Success over a repeated workload: early tasks against late tasks, paired over seeds.
//!
//!     cargo run --release --example self_evolution

use dualpool::config::RunConfig;
use dualpool::experiment::{quarter_rates, simulate};
use dualpool::router::RoutingMode;
use dualpool::stats::paired_t_greater;

fn main() {
    let cfg = RunConfig::from_toml(include_str!("evolution.toml")).expect("bundled config");
    let (mut first, mut last) = (Vec::new(), Vec::new());
    for seed in cfg.seeds() {
        let run = simulate(&cfg, RoutingMode::Online, seed).expect("simulation");
        let (f, l) = quarter_rates(&run.successes());
        println!("seed {seed}: first quarter {f:.2}  last quarter {l:.2}");
        first.push(f);
        last.push(l);
    }
    let t = paired_t_greater(&last, &first).expect("at least two seeds");
    println!("mean gain {:+.3}, t = {:.2}, one-sided p = {:.2e}", t.mean_difference, t.t, t.p_value);
}
