//! Cumulative regret of the online router against a fixed routing probability.
//!
//!     cargo run --release --example regret

use dualpool::theory::{run_regret_suite, RegretConfig};

fn main() {
    let cfg = RegretConfig {
        seeds: 50,
        ..RegretConfig::default()
    };
    let report = run_regret_suite(&cfg).unwrap();
    println!("{:>8}  {:>12}  {:>12}  {:>8}", "t", "online R(t)", "fixed R(t)", "alpha");
    for (o, b) in report.online.points.iter().zip(&report.baseline.points).step_by(10) {
        println!("{:>8}  {:>12.4}  {:>12.2}  {:>8.4}", o.t, o.regret, b.regret, o.alpha);
    }
    println!(
        "\nonline: R = {:.3} + {:.3} ln t, relative residual {:.4}",
        report.fit.a, report.fit.b, report.fit.relative_residual
    );
    println!("verdicts: {:?}", report.verdicts(&cfg));
}
