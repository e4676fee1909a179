//! Routing-probability dynamics and cumulative regret.
//!
//! One local decision takes the first branch with probability `q(α)`, moving
//! the routing probability to `φ₊(α)`, and otherwise moves it to `φ₋(α)`. The
//! expected reward of routing probability `α` is `r(α)`; regret accumulates
//! `r(α*) - r(α_ℓ)` per decision.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::router::{PoolChoice, RouterState};
use crate::rng;

/// Lower clamp of the stochastic-approximation iterate.
pub const ALPHA_MIN: f64 = 0.5;
/// Upper clamp of the stochastic-approximation iterate.
pub const ALPHA_MAX: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegretError {
    #[error("reward curve is not strictly concave near alpha = {at} (second difference {second_difference:e})")]
    NotConcave { at: f64, second_difference: f64 },
    #[error("reward maximiser {0} is not interior to [0.5, 1]")]
    BoundaryMaximizer(f64),
    #[error("drift has no sign change on [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },
    #[error("fit window holds {0} points, need at least 3 with distinct t")]
    DegenerateWindow(usize),
}

pub fn phi_plus(alpha: f64) -> f64 {
    (1.0 + alpha) / (3.0 - alpha)
}

pub fn phi_minus(alpha: f64) -> f64 {
    alpha / (2.0 - alpha)
}

/// Both maps computed by pushing the weight `w` through the router update
/// with the floor removed, then reading off `w / (w + 1)`.
pub fn phi_from_weights(w: f64) -> (f64, f64) {
    let unfloored = RouterState::new(0.5, 0.5, 0.0).with_weight(w);
    let up = unfloored.update(PoolChoice::Exploit, true);
    let down = unfloored.update(PoolChoice::Exploit, false);
    (up.selection_prob(), down.selection_prob())
}

/// Composite reward `r(α)` and first-branch probability `q(α)`.
pub trait RewardCurve: Send + Sync {
    fn r(&self, alpha: f64) -> f64;
    fn q(&self, alpha: f64) -> f64;

    /// Maximiser of `r` on `[0.5, 1]` by golden-section search.
    fn alpha_star(&self) -> f64 {
        let (mut lo, mut hi) = (ALPHA_MIN, 1.0);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - g * (hi - lo);
            let b = lo + g * (hi - lo);
            if self.r(a) < self.r(b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        (lo + hi) / 2.0
    }
}

/// `r(α) = 1 - (α - c)²` with a logistic first-branch probability
/// `q(α) = σ(L - k (α - c))`, where `L` is chosen so the drift vanishes at `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticCurve {
    pub center: f64,
    pub steepness: f64,
}

impl Default for QuadraticCurve {
    fn default() -> Self {
        Self {
            center: 0.75,
            steepness: 60.0,
        }
    }
}

impl QuadraticCurve {
    /// Branch probability that makes the drift zero at `center`.
    pub fn q_star(&self) -> f64 {
        let c = self.center;
        (c - phi_minus(c)) / (phi_plus(c) - phi_minus(c))
    }
}

impl RewardCurve for QuadraticCurve {
    fn r(&self, alpha: f64) -> f64 {
        1.0 - (alpha - self.center).powi(2)
    }

    fn q(&self, alpha: f64) -> f64 {
        let qs = self.q_star();
        let logit = (qs / (1.0 - qs)).ln();
        1.0 / (1.0 + (-(logit - self.steepness * (alpha - self.center))).exp())
    }

    fn alpha_star(&self) -> f64 {
        self.center
    }
}

/// Curve built from per-pool rewards: `r = α r_E + (1-α) r_X` and
/// `q = α r_E + (1-α)(1 - r_X)`.
pub struct BranchCurve<E, X> {
    pub r_e: E,
    pub r_x: X,
}

impl<E, X> RewardCurve for BranchCurve<E, X>
where
    E: Fn(f64) -> f64 + Send + Sync,
    X: Fn(f64) -> f64 + Send + Sync,
{
    fn r(&self, alpha: f64) -> f64 {
        alpha * (self.r_e)(alpha) + (1.0 - alpha) * (self.r_x)(alpha)
    }

    fn q(&self, alpha: f64) -> f64 {
        alpha * (self.r_e)(alpha) + (1.0 - alpha) * (1.0 - (self.r_x)(alpha))
    }
}

/// Checks strict concavity of `r` on a grid over `[0.5, 1)` and an interior maximiser.
pub fn check_concavity(curve: &dyn RewardCurve) -> Result<(), RegretError> {
    let n = 1000;
    let h = (ALPHA_MAX - ALPHA_MIN) / n as f64;
    for i in 1..n {
        let a = ALPHA_MIN + i as f64 * h;
        let d2 = curve.r(a + h) - 2.0 * curve.r(a) + curve.r(a - h);
        if d2 >= 0.0 {
            return Err(RegretError::NotConcave {
                at: a,
                second_difference: d2,
            });
        }
    }
    let star = curve.alpha_star();
    if !(ALPHA_MIN + 1e-6..ALPHA_MAX).contains(&star) {
        return Err(RegretError::BoundaryMaximizer(star));
    }
    Ok(())
}

/// Mean drift of the routing probability.
pub fn drift(alpha: f64, curve: &dyn RewardCurve) -> f64 {
    let q = curve.q(alpha);
    q * (phi_plus(alpha) - alpha) + (1.0 - q) * (phi_minus(alpha) - alpha)
}

/// Root of the drift on `[lo, hi]` by bisection.
pub fn drift_root(curve: &dyn RewardCurve, lo: f64, hi: f64) -> Result<f64, RegretError> {
    let (mut a, mut b) = (lo, hi);
    let (ga, gb) = (drift(a, curve), drift(b, curve));
    if ga.signum() == gb.signum() {
        return Err(RegretError::NoRoot { lo, hi });
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let gm = drift(m, curve);
        if gm == 0.0 {
            return Ok(m);
        }
        if gm.signum() == ga.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Replay the router: weight updates with the floor, no step-size schedule.
    RawWeights,
    /// `α ← clamp(α + (φ± - α) / ℓ)`.
    RobbinsMonro,
    /// Robbins–Monro with the noise removed: `α ← clamp(α + g(α) / ℓ)`.
    MeanField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: u64,
    /// Cumulative regret over decisions `1..=t`.
    pub regret: f64,
    /// Routing probability used at decision `t`.
    pub alpha: f64,
    /// `(α_t - α*)²`.
    pub sq_error: f64,
}

/// Regret trace sampled at checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretTrace {
    pub horizon: u64,
    pub points: Vec<TracePoint>,
}

impl RegretTrace {
    pub fn at(&self, t: u64) -> Option<&TracePoint> {
        self.points
            .binary_search_by_key(&t, |p| p.t)
            .ok()
            .map(|i| &self.points[i])
    }

    pub fn final_regret(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.regret)
    }
}

/// About `per_decade` log-spaced checkpoints in `[1, horizon]`, always
/// including every power of ten and the horizon.
pub fn log_checkpoints(horizon: u64, per_decade: u32) -> Vec<u64> {
    let mut out = vec![horizon];
    let decades = (horizon as f64).log10();
    let steps = (decades * f64::from(per_decade)).ceil() as u32;
    for i in 0..=steps {
        let t = 10f64.powf(f64::from(i) / f64::from(per_decade)).round() as u64;
        if (1..=horizon).contains(&t) {
            out.push(t);
        }
    }
    let mut p = 1;
    while p <= horizon {
        out.push(p);
        p *= 10;
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Options for [`simulate_router_regret`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: u64,
    pub mode: SimMode,
    pub start: f64,
    pub checkpoints: Vec<u64>,
}

impl SimOptions {
    pub fn new(horizon: u64, mode: SimMode) -> Self {
        Self {
            horizon,
            mode,
            start: ALPHA_MIN,
            checkpoints: log_checkpoints(horizon, 20),
        }
    }
}

/// Simulates one run of routing-probability dynamics.
pub fn simulate_router_regret(curve: &dyn RewardCurve, opts: &SimOptions, seed: u64) -> Result<RegretTrace, RegretError> {
    check_concavity(curve)?;
    let star = curve.alpha_star();
    let r_star = curve.r(star);
    let mut r = rng::keyed(seed, &[rng::PURPOSE_THEORY]);
    let mut alpha = opts.start.clamp(ALPHA_MIN, ALPHA_MAX);
    let mut router = RouterState::default().with_weight(alpha / (1.0 - alpha));
    if opts.mode == SimMode::RawWeights {
        alpha = router.selection_prob();
    }
    let mut regret = 0.0;
    let mut points = Vec::with_capacity(opts.checkpoints.len());
    let mut next = opts.checkpoints.iter().copied().peekable();
    for l in 1..=opts.horizon {
        regret += r_star - curve.r(alpha);
        while next.peek().is_some_and(|&t| t <= l) {
            if next.next() == Some(l) {
                points.push(TracePoint {
                    t: l,
                    regret,
                    alpha,
                    sq_error: (alpha - star).powi(2),
                });
            }
        }
        match opts.mode {
            SimMode::RawWeights => {
                let first = r.gen::<f64>() < curve.q(alpha);
                router = router.update(PoolChoice::Exploit, first);
                alpha = router.selection_prob();
            }
            SimMode::RobbinsMonro => {
                let first = r.gen::<f64>() < curve.q(alpha);
                let target = if first { phi_plus(alpha) } else { phi_minus(alpha) };
                alpha = (alpha + (target - alpha) / l as f64).clamp(ALPHA_MIN, ALPHA_MAX);
            }
            SimMode::MeanField => {
                alpha = (alpha + drift(alpha, curve) / l as f64).clamp(ALPHA_MIN, ALPHA_MAX);
            }
        }
    }
    Ok(RegretTrace {
        horizon: opts.horizon,
        points,
    })
}

/// Expected regret of a constant routing probability: exactly `t · gap`.
pub fn fixed_policy_regret(curve: &dyn RewardCurve, alpha_bar: f64, checkpoints: &[u64]) -> RegretTrace {
    let star = curve.alpha_star();
    let gap = curve.r(star) - curve.r(alpha_bar);
    RegretTrace {
        horizon: checkpoints.last().copied().unwrap_or(0),
        points: checkpoints
            .iter()
            .map(|&t| TracePoint {
                t,
                regret: t as f64 * gap,
                alpha: alpha_bar,
                sq_error: (alpha_bar - star).powi(2),
            })
            .collect(),
    }
}

/// Pointwise mean of traces sampled at the same checkpoints.
pub fn mean_trace(traces: &[RegretTrace]) -> RegretTrace {
    let n = traces.len() as f64;
    let first = &traces[0];
    let points = (0..first.points.len())
        .map(|i| {
            let mean = |f: fn(&TracePoint) -> f64| traces.iter().map(|tr| f(&tr.points[i])).sum::<f64>() / n;
            TracePoint {
                t: first.points[i].t,
                regret: mean(|p| p.regret),
                alpha: mean(|p| p.alpha),
                sq_error: mean(|p| p.sq_error),
            }
        })
        .collect();
    RegretTrace {
        horizon: first.horizon,
        points,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub a: f64,
    pub b: f64,
    /// Root-mean-square residual.
    pub rms: f64,
    /// RMS residual divided by the fitted curve's range over the window.
    pub relative_residual: f64,
    pub points: usize,
}

/// Least-squares fit of `R(t) ≈ a + b ln t` over points with `t` in `[lo, hi]`.
pub fn fit_log_growth(trace: &RegretTrace, lo: u64, hi: u64) -> Result<LogFit, RegretError> {
    let pts: Vec<(f64, f64)> = trace
        .points
        .iter()
        .filter(|p| (lo..=hi).contains(&p.t))
        .map(|p| ((p.t as f64).ln(), p.regret))
        .collect();
    let n = pts.len();
    let distinct = pts.windows(2).filter(|w| w[0].0 != w[1].0).count() + 1;
    if n < 3 || distinct < 3 {
        return Err(RegretError::DegenerateWindow(n));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rms = (pts.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum::<f64>() / nf).sqrt();
    let fits = pts.iter().map(|p| a + b * p.0);
    let range = fits.clone().fold(f64::NEG_INFINITY, f64::max) - fits.fold(f64::INFINITY, f64::min);
    let relative_residual = if range > 0.0 {
        rms / range
    } else if rms == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(LogFit {
        a,
        b,
        rms,
        relative_residual,
        points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn trace_from(f: impl Fn(f64) -> f64, ts: &[u64]) -> RegretTrace {
        RegretTrace {
            horizon: *ts.last().unwrap(),
            points: ts
                .iter()
                .map(|&t| TracePoint {
                    t,
                    regret: f(t as f64),
                    alpha: 0.0,
                    sq_error: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn phi_values() {
        assert_abs_diff_eq!(phi_plus(0.5), 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(phi_minus(0.5), 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn phi_plus_matches_router_replay() {
        let after = RouterState::default().update(PoolChoice::Exploit, true);
        assert_abs_diff_eq!(after.selection_prob(), phi_plus(0.5), epsilon = 1e-15);
    }

    #[test]
    fn floor_projection_breaks_phi_minus_below_two() {
        let floored = RouterState::default().with_weight(1.5).update(PoolChoice::Exploit, false);
        assert_eq!(floored.selection_prob(), 0.5);
        assert!(phi_minus(0.6) < 0.5);
    }

    #[test]
    fn phi_consistency_grid() {
        for i in 0..=2000 {
            let w = 1.0 + i as f64 * 0.05;
            let a = w / (w + 1.0);
            let (p, m) = phi_from_weights(w);
            assert_abs_diff_eq!(p, phi_plus(a), epsilon = 1e-12);
            assert_abs_diff_eq!(m, phi_minus(a), epsilon = 1e-12);
        }
    }

    #[test]
    fn drift_root_sits_at_the_designed_point() {
        let c = QuadraticCurve::default();
        let root = drift_root(&c, 0.5, ALPHA_MAX).unwrap();
        assert!(drift(root, &c).abs() < 1e-10);
        assert_abs_diff_eq!(root, 0.75, epsilon = 1e-9);
        assert_abs_diff_eq!(c.q_star(), 0.84375, epsilon = 1e-12);
    }

    #[test]
    fn single_branch_limits() {
        struct Const(f64);
        impl RewardCurve for Const {
            fn r(&self, a: f64) -> f64 {
                -(a - 0.7).powi(2)
            }
            fn q(&self, _: f64) -> f64 {
                self.0
            }
        }
        for a in [0.5, 0.6, 0.8, 0.99] {
            assert!(drift(a, &Const(1.0)) > 0.0);
            assert_abs_diff_eq!(drift(a, &Const(1.0)), phi_plus(a) - a, epsilon = 1e-15);
            assert!(drift(a, &Const(0.0)) < 0.0);
            assert_abs_diff_eq!(drift(a, &Const(0.0)), phi_minus(a) - a, epsilon = 1e-15);
        }
    }

    #[test]
    fn convex_curve_is_rejected() {
        let bad = BranchCurve {
            r_e: |a: f64| a * a,
            r_x: |_: f64| 0.0,
        };
        assert!(matches!(check_concavity(&bad), Err(RegretError::NotConcave { .. })));
        let opts = SimOptions::new(10, SimMode::RobbinsMonro);
        assert!(simulate_router_regret(&bad, &opts, 0).is_err());
    }

    #[test]
    fn boundary_maximiser_is_rejected() {
        let edge = QuadraticCurve {
            center: 0.3,
            steepness: 10.0,
        };
        assert!(matches!(check_concavity(&edge), Err(RegretError::BoundaryMaximizer(_))));
    }

    #[test]
    fn branch_curve_composites() {
        let c = BranchCurve {
            r_e: |a: f64| 1.0 - a * a,
            r_x: |_: f64| 0.5,
        };
        let a = 0.6;
        assert_abs_diff_eq!(c.r(a), a * (1.0 - a * a) + (1.0 - a) * 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(c.q(a), a * (1.0 - a * a) + (1.0 - a) * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mean_field_from_the_optimum_has_zero_regret() {
        let c = QuadraticCurve::default();
        let opts = SimOptions {
            start: 0.75,
            ..SimOptions::new(100_000, SimMode::MeanField)
        };
        let tr = simulate_router_regret(&c, &opts, 0).unwrap();
        assert!(tr.points.iter().all(|p| p.regret.abs() < 1e-20));
    }

    #[test]
    fn fixed_policy_regret_is_linear() {
        let c = QuadraticCurve::default();
        let cps = log_checkpoints(100_000, 5);
        let tr = fixed_policy_regret(&c, 0.5, &cps);
        assert_eq!(tr.at(100_000).unwrap().regret, 100_000.0 * 0.0625);
        assert_eq!(tr.at(100_000).unwrap().regret / tr.at(10_000).unwrap().regret, 10.0);
        assert!(fixed_policy_regret(&c, 0.75, &cps).points.iter().all(|p| p.regret == 0.0));
    }

    #[test]
    fn log_fit_recovers_exact_model() {
        let ts = log_checkpoints(100_000, 20);
        let fit = fit_log_growth(&trace_from(|t| 3.0 + 2.0 * t.ln(), &ts), 1, 100_000).unwrap();
        assert_abs_diff_eq!(fit.a, 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.b, 2.0, epsilon = 1e-9);
        assert!(fit.relative_residual < 1e-9);
    }

    #[test]
    fn log_fit_flags_linear_growth() {
        let ts = log_checkpoints(100_000, 20);
        let fit = fit_log_growth(&trace_from(|t| 0.01 * t, &ts), 1000, 100_000).unwrap();
        assert!(fit.relative_residual > 0.05, "{}", fit.relative_residual);
    }

    #[test]
    fn log_fit_of_constant_has_zero_slope() {
        let ts = log_checkpoints(1000, 10);
        let fit = fit_log_growth(&trace_from(|_| 4.0, &ts), 1, 1000).unwrap();
        assert_abs_diff_eq!(fit.b, 0.0, epsilon = 1e-12);
        assert_eq!(fit.relative_residual, 0.0);
    }

    #[test]
    fn degenerate_window_is_an_error() {
        let ts = log_checkpoints(1000, 10);
        let tr = trace_from(|t| t, &ts);
        assert!(matches!(fit_log_growth(&tr, 5000, 9000), Err(RegretError::DegenerateWindow(0))));
    }

    #[test]
    fn checkpoints_include_decades_and_horizon() {
        let cps = log_checkpoints(12_345, 4);
        for t in [1, 10, 100, 1000, 10_000, 12_345] {
            assert!(cps.contains(&t));
        }
        assert!(cps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn raw_weight_mode_stays_in_router_range() {
        let c = QuadraticCurve::default();
        let tr = simulate_router_regret(&c, &SimOptions::new(10_000, SimMode::RawWeights), 3).unwrap();
        assert!(tr.points.iter().all(|p| (0.5..1.0).contains(&p.alpha)));
    }

    #[test]
    fn runs_are_seed_deterministic() {
        let c = QuadraticCurve::default();
        let o = SimOptions::new(5_000, SimMode::RobbinsMonro);
        assert_eq!(simulate_router_regret(&c, &o, 9).unwrap(), simulate_router_regret(&c, &o, 9).unwrap());
    }

    proptest! {
        #[test]
        fn phi_brackets_alpha(a in 0.001f64..0.999) {
            prop_assert!(phi_plus(a) > a);
            prop_assert!(a > phi_minus(a));
        }

        #[test]
        fn regret_is_nondecreasing(seed in any::<u64>()) {
            let c = QuadraticCurve::default();
            let tr = simulate_router_regret(&c, &SimOptions::new(2_000, SimMode::RobbinsMonro), seed).unwrap();
            prop_assert!(tr.points.windows(2).all(|w| w[1].regret >= w[0].regret));
        }
    }
}
