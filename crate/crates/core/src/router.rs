//! Online exploitation/exploration router.
//!
//! Each agent keeps a weight `w_e` for its E-pool against a fixed X-pool weight
//! of 1. The E-pool is selected with probability `alpha = w_e / (w_e + w_x)`.
//! After a task, every stage from the second onward yields an improvement bit
//! and the weight moves by the four-way table in [`RouterState::update`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

pub const DEFAULT_INCREMENT: f64 = 0.5;
pub const DEFAULT_DECAY: f64 = 0.5;
pub const WEIGHT_FLOOR: f64 = 1.0;
pub const X_POOL_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PoolChoice {
    Exploit,
    Explore,
}

impl PoolChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolChoice::Exploit => "exploit",
            PoolChoice::Explore => "explore",
        }
    }
}

impl fmt::Display for PoolChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Router weights and update constants for one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouterState {
    pub w_e: f64,
    pub w_x: f64,
    /// Additive step applied when the weight grows.
    pub increment: f64,
    /// Multiplicative factor applied when the weight shrinks.
    pub decay: f64,
    pub floor: f64,
}

impl Default for RouterState {
    fn default() -> Self {
        Self {
            w_e: WEIGHT_FLOOR,
            w_x: X_POOL_WEIGHT,
            increment: DEFAULT_INCREMENT,
            decay: DEFAULT_DECAY,
            floor: WEIGHT_FLOOR,
        }
    }
}

impl RouterState {
    pub fn new(increment: f64, decay: f64, floor: f64) -> Self {
        Self {
            w_e: floor,
            w_x: X_POOL_WEIGHT,
            increment,
            decay,
            floor,
        }
    }

    pub fn with_weight(mut self, w_e: f64) -> Self {
        self.w_e = w_e.max(self.floor);
        self
    }

    /// Probability of routing to the E-pool.
    pub fn selection_prob(&self) -> f64 {
        self.w_e / (self.w_e + self.w_x)
    }

    /// Samples a pool: exploit with probability [`selection_prob`](Self::selection_prob).
    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> PoolChoice {
        choose_with_prob(self.selection_prob(), rng)
    }

    /// Applies one stage of feedback. `improved` is the indicator that the
    /// stage score rose over the previous stage.
    ///
    /// | choice  | improved | new `w_e`                 |
    /// |---------|----------|---------------------------|
    /// | Exploit | true     | `w_e + increment`         |
    /// | Exploit | false    | `max(floor, decay * w_e)` |
    /// | Explore | true     | `max(floor, decay * w_e)` |
    /// | Explore | false    | `w_e + increment`         |
    pub fn update(&self, choice: PoolChoice, improved: bool) -> RouterState {
        let grow = matches!(
            (choice, improved),
            (PoolChoice::Exploit, true) | (PoolChoice::Explore, false)
        );
        let w_e = if grow {
            self.w_e + self.increment
        } else {
            self.floor.max(self.decay * self.w_e)
        };
        RouterState { w_e, ..*self }
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if !(self.w_e.is_finite() && self.w_e >= self.floor) {
            return Err(format!("w_e = {} below floor {}", self.w_e, self.floor));
        }
        if self.w_x != X_POOL_WEIGHT {
            return Err(format!("w_x = {} but must stay {}", self.w_x, X_POOL_WEIGHT));
        }
        Ok(())
    }
}

/// Draws `Exploit` when a uniform `[0, 1)` sample falls below `alpha`.
///
/// Every routing mode consumes exactly one uniform draw per decision, so online
/// and fixed-probability runs with the same random stream see the same draws.
pub fn choose_with_prob<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> PoolChoice {
    let u: f64 = rng.gen();
    if u < alpha {
        PoolChoice::Exploit
    } else {
        PoolChoice::Explore
    }
}

/// How an agent picks its pool: the learned router or a fixed-probability baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoutingMode {
    Online,
    /// Constant exploit probability; weights are never updated.
    Fixed { alpha: f64 },
}

impl RoutingMode {
    pub fn label(&self) -> String {
        match self {
            RoutingMode::Online => "online".to_string(),
            RoutingMode::Fixed { alpha } => format!("fixed-{alpha}"),
        }
    }

    pub fn alpha(&self, state: &RouterState) -> f64 {
        match self {
            RoutingMode::Online => state.selection_prob(),
            RoutingMode::Fixed { alpha } => *alpha,
        }
    }

    pub fn choose<R: Rng + ?Sized>(&self, state: &RouterState, rng: &mut R) -> PoolChoice {
        choose_with_prob(self.alpha(state), rng)
    }

    pub fn learns(&self) -> bool {
        matches!(self, RoutingMode::Online)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn at(w: f64) -> RouterState {
        RouterState::default().with_weight(w)
    }

    #[test]
    fn selection_probability_values() {
        assert_eq!(at(1.0).selection_prob(), 0.5);
        assert!((at(1.5).selection_prob() - 0.6).abs() < 1e-15);
        assert_eq!(at(3.0).selection_prob(), 0.75);
    }

    #[test]
    fn update_table_examples() {
        assert_eq!(at(1.0).update(PoolChoice::Exploit, true).w_e, 1.5);
        assert_eq!(at(2.0).update(PoolChoice::Exploit, false).w_e, 1.0);
        assert_eq!(at(1.0).update(PoolChoice::Explore, true).w_e, 1.0);
        assert_eq!(at(1.0).update(PoolChoice::Explore, false).w_e, 1.5);
    }

    #[test]
    fn update_never_touches_x_weight() {
        let s = at(2.0).update(PoolChoice::Explore, false);
        assert_eq!(s.w_x, 1.0);
    }

    #[test]
    fn monte_carlo_frequency_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let state = at(1.0);
        let n = 100_000;
        let exploits = (0..n)
            .filter(|_| state.choose(&mut rng) == PoolChoice::Exploit)
            .count();
        let freq = exploits as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq = {freq}");
    }

    #[test]
    fn near_certain_branch() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let alpha = 1.0 - 1e-9;
        for _ in 0..1000 {
            assert_eq!(choose_with_prob(alpha, &mut rng), PoolChoice::Exploit);
        }
    }

    #[test]
    fn seeded_choices_are_reproducible() {
        let state = at(1.7);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| state.choose(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(42), run(42));
    }

    #[test]
    fn fixed_mode_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = RouterState::default();
        for _ in 0..1000 {
            assert_eq!(
                RoutingMode::Fixed { alpha: 1.0 }.choose(&s, &mut rng),
                PoolChoice::Exploit
            );
            assert_eq!(
                RoutingMode::Fixed { alpha: 0.0 }.choose(&s, &mut rng),
                PoolChoice::Explore
            );
        }
    }

    fn choice_strategy() -> impl Strategy<Value = PoolChoice> {
        prop_oneof![Just(PoolChoice::Exploit), Just(PoolChoice::Explore)]
    }

    proptest! {
        #[test]
        fn weights_stay_above_floor(steps in proptest::collection::vec((choice_strategy(), any::<bool>()), 0..200)) {
            let mut s = RouterState::default();
            for (c, d) in steps {
                s = s.update(c, d);
                prop_assert!(s.check_invariants().is_ok());
                let a = s.selection_prob();
                prop_assert!((0.5..1.0).contains(&a));
            }
        }

        #[test]
        fn explore_success_mirrors_exploit_failure(w in 1.0f64..50.0) {
            let s = at(w);
            prop_assert_eq!(s.update(PoolChoice::Explore, true), s.update(PoolChoice::Exploit, false));
            prop_assert_eq!(s.update(PoolChoice::Explore, false), s.update(PoolChoice::Exploit, true));
        }
    }
}
