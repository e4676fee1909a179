//! Learned routing against fixed exploit probabilities on the mixed workload.
//!
//!     cargo run --release --example ablation

use dualpool::config::RunConfig;
use dualpool::experiment::{run_all, summarize};

fn main() {
    let cfg = RunConfig::from_toml(include_str!("mixed.toml")).expect("bundled config");
    let runs = run_all(&cfg).expect("simulation");
    let summary = summarize(&runs);
    for m in &summary.modes {
        println!("{:<10} mean success {:.3}", m.mode, m.mean_success);
    }
    for c in &summary.comparisons {
        let t = c.test.expect("paired seeds");
        println!("{} > {}: diff {:+.4}, p = {:.2e}", c.mode, c.baseline, t.mean_difference, t.p_value);
    }
}
