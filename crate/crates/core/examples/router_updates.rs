//! The router's weight update for every (weight, choice, improvement) case.
//!
//!     cargo run --example router_updates

use dualpool::router::{PoolChoice, RouterState};

fn main() {
    println!("{:>5}  {:>7}  {:>5}  {:>7}  {:>7}", "w_e", "choice", "delta", "w_e'", "alpha'");
    for w in [1.0, 2.0] {
        for choice in [PoolChoice::Exploit, PoolChoice::Explore] {
            for improved in [false, true] {
                let next = RouterState::default().with_weight(w).update(choice, improved);
                println!(
                    "{w:>5.1}  {:>7}  {:>5}  {:>7.2}  {:>7.4}",
                    choice.as_str(),
                    u8::from(improved),
                    next.w_e,
                    next.selection_prob()
                );
            }
        }
    }

    // A run of improvements after exploiting drives alpha towards 1;
    // repeated failures decay it back to the floor.
    let mut r = RouterState::default();
    let mut path = vec![r.selection_prob()];
    for _ in 0..6 {
        r = r.update(PoolChoice::Exploit, true);
        path.push(r.selection_prob());
    }
    for _ in 0..4 {
        r = r.update(PoolChoice::Exploit, false);
        path.push(r.selection_prob());
    }
    let path: Vec<String> = path.iter().map(|a| format!("{a:.3}")).collect();
    println!("\nalpha over ten updates: {}", path.join(" "));
}
