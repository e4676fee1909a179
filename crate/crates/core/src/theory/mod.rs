//! Numerical checks of the mixed-chain reachability and the routing regret.

pub mod markov;
pub mod regret;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng;
use markov::{
    block_diagonal, check_reachability, mixed_transition, random_simplex, random_transition, stationary_from, swap2,
    total_variation, MarkovError, ReachabilityReport, TeleportPrior, DEFAULT_POWER_CAP,
};
use regret::{
    fit_log_growth, fixed_policy_regret, log_checkpoints, mean_trace, simulate_router_regret, LogFit, QuadraticCurve,
    RegretError, RegretTrace, SimMode, SimOptions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReachConfig {
    pub instances: usize,
    pub max_states: usize,
    pub max_alpha: f64,
    /// Power-iteration residual tolerance.
    pub tolerance: f64,
    /// Largest total variation allowed between limits from two starts.
    pub uniqueness_tv: f64,
    /// Smallest total variation expected between trapped limits.
    pub trap_tv: f64,
    pub seed: u64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            instances: 100,
            max_states: 200,
            max_alpha: 0.99,
            tolerance: 1e-12,
            uniqueness_tv: 1e-9,
            trap_tv: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachInstance {
    pub index: usize,
    pub states: usize,
    pub alpha: f64,
    pub min_entry: f64,
    pub bound: f64,
    pub strictly_positive: bool,
    pub start_tv: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachReport {
    pub instances: Vec<ReachInstance>,
    /// Two-state swap at alpha = 1: expected to fail with period 2.
    pub swap: ReachabilityReport,
    /// Block-diagonal base at alpha = 1: total variation between limits from the two blocks.
    pub trapped_tv: f64,
    pub trapped: ReachabilityReport,
}

impl ReachReport {
    pub fn instances_pass(&self) -> bool {
        self.instances.iter().all(|i| i.pass)
    }

    pub fn counterexamples_detected(&self, cfg: &ReachConfig) -> bool {
        self.swap.period == Some(2) && !self.swap.passes() && self.trapped_tv >= cfg.trap_tv && !self.trapped.passes()
    }

    pub fn pass(&self, cfg: &ReachConfig) -> bool {
        self.instances_pass() && self.counterexamples_detected(cfg)
    }
}

fn reach_instance(cfg: &ReachConfig, index: usize) -> Result<ReachInstance, MarkovError> {
    let mut r = rng::keyed(cfg.seed, &[rng::PURPOSE_THEORY, 1, index as u64]);
    let n = r.gen_range(2..=cfg.max_states.max(2));
    let alpha = r.gen_range(0.0..=cfg.max_alpha);
    let t = random_transition(n, &mut r);
    let h = TeleportPrior::new(random_simplex(n, true, &mut r))?;
    let m = mixed_transition(&t, &h, alpha)?;
    let rep = check_reachability(&m.matrix);
    let bound = (1.0 - alpha) * h.min_entry();
    let a = stationary_from(&m.matrix, &random_simplex(n, false, &mut r), cfg.tolerance, DEFAULT_POWER_CAP)?;
    let b = stationary_from(&m.matrix, &random_simplex(n, false, &mut r), cfg.tolerance, DEFAULT_POWER_CAP)?;
    let start_tv = total_variation(&a, &b);
    Ok(ReachInstance {
        index,
        states: n,
        alpha,
        min_entry: rep.min_entry,
        bound,
        strictly_positive: rep.strictly_positive,
        start_tv,
        pass: rep.strictly_positive && rep.min_entry >= bound - 1e-15 && start_tv <= cfg.uniqueness_tv && rep.passes(),
    })
}

pub fn run_reach_suite(cfg: &ReachConfig) -> Result<ReachReport, MarkovError> {
    let instances = (0..cfg.instances)
        .into_par_iter()
        .map(|i| reach_instance(cfg, i))
        .collect::<Result<Vec<_>, _>>()?;

    let swap = check_reachability(&mixed_transition(&swap2(), &TeleportPrior::uniform(2), 1.0)?.matrix);

    let mut r = rng::keyed(cfg.seed, &[rng::PURPOSE_THEORY, 2]);
    let (a, b) = (r.gen_range(2..=10), r.gen_range(2..=10));
    let t = block_diagonal(a, b, &mut r);
    let m = mixed_transition(&t, &TeleportPrior::uniform(a + b), 1.0)?;
    let mut first = vec![0.0; a + b];
    first[0] = 1.0;
    let mut last = vec![0.0; a + b];
    last[a + b - 1] = 1.0;
    let pa = stationary_from(&m.matrix, &first, cfg.tolerance, DEFAULT_POWER_CAP)?;
    let pb = stationary_from(&m.matrix, &last, cfg.tolerance, DEFAULT_POWER_CAP)?;
    Ok(ReachReport {
        instances,
        swap,
        trapped_tv: total_variation(&pa, &pb),
        trapped: check_reachability(&m.matrix),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegretConfig {
    pub seeds: usize,
    pub horizon: u64,
    pub center: f64,
    pub steepness: f64,
    pub baseline_alpha: f64,
    pub checkpoints_per_decade: u32,
    /// Start of the mid-range window for the scaled-MSE trend check; the tail starts at `split`.
    pub mid_start: u64,
    pub split: u64,
    /// Tail mean of `ℓ (α_ℓ - α*)²` may be at most this multiple of the mid-range mean.
    pub max_mse_ratio: f64,
    pub max_growth_ratio: f64,
    pub max_relative_residual: f64,
    /// Online regret at the horizon may be at most this fraction of the baseline's.
    pub max_regret_fraction: f64,
    pub seed: u64,
}

impl Default for RegretConfig {
    fn default() -> Self {
        Self {
            seeds: 200,
            horizon: 100_000,
            center: 0.75,
            steepness: 60.0,
            baseline_alpha: 0.5,
            checkpoints_per_decade: 20,
            mid_start: 1_000,
            split: 10_000,
            max_mse_ratio: 1.5,
            max_growth_ratio: 2.0,
            max_relative_residual: 0.05,
            max_regret_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub online: RegretTrace,
    pub baseline: RegretTrace,
    /// Mean over checkpoints in the mid-range of the seed-averaged `ℓ (α_ℓ - α*)²`.
    pub scaled_mse_mid: f64,
    pub scaled_mse_tail: f64,
    /// Seed-averaged `R(T) / R(T/10)`.
    pub growth_ratio: f64,
    pub fit: LogFit,
    pub baseline_growth_ratio: f64,
    pub baseline_fit: LogFit,
    /// Online over baseline regret at the horizon.
    pub regret_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretVerdicts {
    pub mse_no_upward_trend: bool,
    pub log_like_growth: bool,
    pub log_fit: bool,
    pub baseline_linear: bool,
    pub separation: bool,
}

impl RegretVerdicts {
    pub fn all(&self) -> bool {
        self.mse_no_upward_trend && self.log_like_growth && self.log_fit && self.baseline_linear && self.separation
    }
}

impl RegretReport {
    pub fn mse_ratio(&self) -> f64 {
        self.scaled_mse_tail / self.scaled_mse_mid
    }

    pub fn verdicts(&self, cfg: &RegretConfig) -> RegretVerdicts {
        RegretVerdicts {
            mse_no_upward_trend: self.mse_ratio() <= cfg.max_mse_ratio,
            log_like_growth: self.growth_ratio <= cfg.max_growth_ratio,
            log_fit: self.fit.relative_residual <= cfg.max_relative_residual,
            baseline_linear: self.baseline_growth_ratio == 10.0
                && self.baseline_fit.relative_residual > cfg.max_relative_residual,
            separation: self.regret_fraction <= cfg.max_regret_fraction,
        }
    }
}

fn window_mean(trace: &RegretTrace, lo: u64, hi_exclusive: u64) -> f64 {
    let v: Vec<f64> = trace
        .points
        .iter()
        .filter(|p| p.t >= lo && p.t < hi_exclusive)
        .map(|p| p.t as f64 * p.sq_error)
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn growth(trace: &RegretTrace, horizon: u64) -> f64 {
    let at = |t| trace.at(t).map_or(f64::NAN, |p| p.regret);
    at(horizon) / at(horizon / 10)
}

/// Robbins–Monro runs over many seeds against a fixed-probability baseline.
pub fn run_regret_suite(cfg: &RegretConfig) -> Result<RegretReport, RegretError> {
    let curve = QuadraticCurve {
        center: cfg.center,
        steepness: cfg.steepness,
    };
    let opts = SimOptions {
        checkpoints: log_checkpoints(cfg.horizon, cfg.checkpoints_per_decade),
        ..SimOptions::new(cfg.horizon, SimMode::RobbinsMonro)
    };
    // Ordered collect keeps the reduction independent of scheduling.
    let traces = (0..cfg.seeds as u64)
        .into_par_iter()
        .map(|s| simulate_router_regret(&curve, &opts, rng::mix(cfg.seed, &[s])))
        .collect::<Result<Vec<_>, _>>()?;
    let online = mean_trace(&traces);
    let baseline = fixed_policy_regret(&curve, cfg.baseline_alpha, &opts.checkpoints);
    let fit = fit_log_growth(&online, cfg.mid_start, cfg.horizon)?;
    let baseline_fit = fit_log_growth(&baseline, cfg.mid_start, cfg.horizon)?;
    let regret_fraction = online.final_regret() / baseline.final_regret();
    Ok(RegretReport {
        scaled_mse_mid: window_mean(&online, cfg.mid_start, cfg.split),
        scaled_mse_tail: window_mean(&online, cfg.split, cfg.horizon + 1),
        growth_ratio: growth(&online, cfg.horizon),
        baseline_growth_ratio: growth(&baseline, cfg.horizon),
        fit,
        baseline_fit,
        regret_fraction,
        online,
        baseline,
    })
}
