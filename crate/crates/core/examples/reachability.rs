//! Mixing a base chain with teleportation: strict positivity, unique limits,
//! and the two ways it breaks at alpha = 1.
//!
//!     cargo run --release --example reachability

use dualpool::theory::markov::{check_reachability, mixed_transition, stationary_from, swap2, TeleportPrior};
use dualpool::theory::{run_reach_suite, ReachConfig};

fn main() {
    let h = TeleportPrior::uniform(2);
    for alpha in [0.5, 0.9, 1.0] {
        let m = mixed_transition(&swap2(), &h, alpha).unwrap();
        let rep = check_reachability(&m.matrix);
        // Start from a point mass: the uniform start is already fixed under the swap.
        let pi = stationary_from(&m.matrix, &[1.0, 0.0], 1e-12, 10_000)
            .map(|p| format!("{p:.4?}"))
            .unwrap_or_else(|e| e.to_string());
        println!("swap, alpha {alpha}: min entry {:.3}, {:?}, stationary {pi}", rep.min_entry, rep.verdict);
    }

    let cfg = ReachConfig::default();
    let report = run_reach_suite(&cfg).unwrap();
    let worst = report
        .instances
        .iter()
        .map(|i| i.start_tv)
        .fold(0.0f64, f64::max);
    println!(
        "\n{} random instances: all pass = {}, largest start-to-start TV {worst:.2e}",
        report.instances.len(),
        report.instances_pass()
    );
    println!("block-diagonal at alpha = 1: limits differ by TV {:.3}", report.trapped_tv);
}
