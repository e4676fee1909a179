//! Column-stochastic transition matrices, teleportation mixing, reachability
//! diagnostics and stationary distributions.
//!
//! Entry `(i, j)` is the probability of moving from state `j` to state `i`, so
//! distributions are column vectors and one step is `p -> M p`.

use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

/// Tolerance on column sums and simplex sums.
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_POWER_CAP: usize = 1_000_000;
pub const DEFAULT_POWER_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("matrix needs {expected} entries for {n} states, got {actual}")]
    Shape { n: usize, expected: usize, actual: usize },
    #[error("empty state space")]
    Empty,
    #[error("entry ({row}, {col}) = {value} is negative or not finite")]
    BadEntry { row: usize, col: usize, value: f64 },
    #[error("column {col} sums to {sum}, not 1")]
    NotStochastic { col: usize, sum: f64 },
    #[error("prior has length {actual}, matrix has {expected} states")]
    PriorLength { expected: usize, actual: usize },
    #[error("prior entry {index} = {value} is negative or not finite")]
    BadPrior { index: usize, value: f64 },
    #[error("prior sums to {0}, not 1")]
    PriorSum(f64),
    #[error("alpha {0} outside [0, 1]")]
    Alpha(f64),
    #[error("power iteration did not converge in {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    /// Row-major.
    data: Vec<f64>,
}

impl TransitionMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self, MarkovError> {
        if n == 0 {
            return Err(MarkovError::Empty);
        }
        if data.len() != n * n {
            return Err(MarkovError::Shape {
                n,
                expected: n * n,
                actual: data.len(),
            });
        }
        for (k, &v) in data.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MarkovError::BadEntry {
                    row: k / n,
                    col: k % n,
                    value: v,
                });
            }
        }
        let m = Self { n, data };
        for col in 0..n {
            let sum: f64 = (0..n).map(|row| m.get(row, col)).sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(MarkovError::NotStochastic { col, sum });
            }
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MarkovError> {
        let n = rows.len();
        Self::new(n, rows.iter().flatten().copied().collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// One step: `M p`.
    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Teleportation prior over states.
#[derive(Debug, Clone, PartialEq)]
pub struct TeleportPrior {
    h: Vec<f64>,
}

impl TeleportPrior {
    pub fn new(h: Vec<f64>) -> Result<Self, MarkovError> {
        if h.is_empty() {
            return Err(MarkovError::Empty);
        }
        if let Some((index, &value)) = h.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(MarkovError::BadPrior { index, value });
        }
        let sum: f64 = h.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(MarkovError::PriorSum(sum));
        }
        Ok(Self { h })
    }

    pub fn uniform(n: usize) -> Self {
        Self {
            h: vec![1.0 / n as f64; n],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.h
    }

    pub fn min_entry(&self) -> f64 {
        self.h.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `M = alpha T + (1 - alpha) h 1ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedTransition {
    pub alpha: f64,
    pub base: TransitionMatrix,
    pub prior: TeleportPrior,
    pub matrix: TransitionMatrix,
}

pub fn mixed_transition(base: &TransitionMatrix, prior: &TeleportPrior, alpha: f64) -> Result<MixedTransition, MarkovError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(MarkovError::Alpha(alpha));
    }
    let n = base.n();
    if prior.h.len() != n {
        return Err(MarkovError::PriorLength {
            expected: n,
            actual: prior.h.len(),
        });
    }
    let data = (0..n * n)
        .map(|k| alpha * base.data[k] + (1.0 - alpha) * prior.h[k / n])
        .collect();
    Ok(MixedTransition {
        alpha,
        base: base.clone(),
        prior: prior.clone(),
        matrix: TransitionMatrix { n, data },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Irreducible and aperiodic.
    GloballyReachable,
    Reducible,
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReachabilityReport {
    pub strictly_positive: bool,
    pub min_entry: f64,
    pub components: usize,
    /// Period of the chain when irreducible.
    pub period: Option<usize>,
    pub verdict: Verdict,
}

impl ReachabilityReport {
    pub fn passes(&self) -> bool {
        self.verdict == Verdict::GloballyReachable
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Period of a strongly connected support graph: the gcd over edges `u -> v`
/// of `level(u) + 1 - level(v)` for BFS levels from any root.
fn period(m: &TransitionMatrix) -> usize {
    let n = m.n;
    let mut level = vec![usize::MAX; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    level[0] = 0;
    let mut g = 0;
    while let Some(u) = queue.pop_front() {
        for v in (0..n).filter(|&v| m.get(v, u) > 0.0) {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                g = gcd(g, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    g
}

/// Reachability diagnostics. A strictly positive stochastic matrix is
/// primitive, so the graph analysis only runs when some entry is zero.
pub fn check_reachability(m: &TransitionMatrix) -> ReachabilityReport {
    let min_entry = m.min_entry();
    if min_entry > 0.0 {
        return ReachabilityReport {
            strictly_positive: true,
            min_entry,
            components: 1,
            period: Some(1),
            verdict: Verdict::GloballyReachable,
        };
    }
    let n = m.n;
    let mut g = DiGraph::<(), ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
    for col in 0..n {
        for row in 0..n {
            if m.get(row, col) > 0.0 {
                g.add_edge(nodes[col], nodes[row], ());
            }
        }
    }
    let components = kosaraju_scc(&g).len();
    let (period, verdict) = if components > 1 {
        (None, Verdict::Reducible)
    } else {
        let p = period(m);
        (Some(p), if p == 1 { Verdict::GloballyReachable } else { Verdict::Periodic })
    };
    ReachabilityReport {
        strictly_positive: false,
        min_entry,
        components,
        period,
        verdict,
    }
}

/// Power iteration from `start` until `‖M p - p‖₁ < tol`.
pub fn stationary_from(m: &TransitionMatrix, start: &[f64], tol: f64, cap: usize) -> Result<Vec<f64>, MarkovError> {
    let mut p = start.to_vec();
    let mut residual = f64::INFINITY;
    for _ in 0..cap {
        let next = m.apply(&p);
        residual = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        // Renormalise to keep rounding drift off the simplex.
        let total: f64 = next.iter().sum();
        p = next.into_iter().map(|x| x / total).collect();
        if residual < tol {
            return Ok(p);
        }
    }
    Err(MarkovError::NoConvergence { iterations: cap, residual })
}

/// Stationary distribution from the uniform start.
pub fn stationary(m: &TransitionMatrix, tol: f64) -> Result<Vec<f64>, MarkovError> {
    let n = m.n;
    stationary_from(m, &vec![1.0 / n as f64; n], tol, DEFAULT_POWER_CAP)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Random point on the simplex; strictly positive when `positive` is set.
pub fn random_simplex<R: Rng + ?Sized>(n: usize, positive: bool, rng: &mut R) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n)
        .map(|_| if positive { rng.gen_range(0.05..1.0) } else { rng.gen::<f64>() })
        .collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

/// Random column-stochastic matrix whose columns each have between one and
/// `n` nonzero entries, so zero entries and reducible supports both occur.
pub fn random_transition<R: Rng + ?Sized>(n: usize, rng: &mut R) -> TransitionMatrix {
    let mut data = vec![0.0; n * n];
    for col in 0..n {
        let support = rng.gen_range(1..=n);
        let rows = sample(rng, n, support).into_vec();
        let weights: Vec<f64> = rows.iter().map(|_| rng.gen_range(0.01..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for (row, w) in rows.into_iter().zip(weights) {
            data[row * n + col] = w / total;
        }
    }
    TransitionMatrix { n, data }
}

/// Block-diagonal matrix with two strictly positive blocks of sizes `a` and `b`.
pub fn block_diagonal<R: Rng + ?Sized>(a: usize, b: usize, rng: &mut R) -> TransitionMatrix {
    let n = a + b;
    let mut data = vec![0.0; n * n];
    for (lo, len) in [(0, a), (a, b)] {
        for col in lo..lo + len {
            let w = random_simplex(len, true, rng);
            for (k, x) in w.into_iter().enumerate() {
                data[(lo + k) * n + col] = x;
            }
        }
    }
    TransitionMatrix { n, data }
}

pub fn swap2() -> TransitionMatrix {
    TransitionMatrix {
        n: 2,
        data: vec![0.0, 1.0, 1.0, 0.0],
    }
}
