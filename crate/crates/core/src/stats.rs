//! Small statistics helpers for comparing runs across seeds.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t: f64,
    /// One-sided p-value for the alternative `mean(a - b) > 0`.
    pub p_value: f64,
}

/// One-sided paired t-test of `a > b`. `None` when fewer than two pairs.
///
/// With zero spread in the differences the statistic is infinite: p is 0 for
/// a positive mean difference and 1 otherwise.
pub fn paired_t_greater(a: &[f64], b: &[f64]) -> Option<PairedTest> {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let n = a.len();
    if n < 2 {
        return None;
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let md = mean(&d);
    let sd = sample_sd(&d);
    let (t, p_value) = if sd == 0.0 {
        if md > 0.0 {
            (f64::INFINITY, 0.0)
        } else if md < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 1.0)
        }
    } else {
        let t = md / (sd / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
        (t, 1.0 - dist.cdf(t))
    };
    Some(PairedTest {
        n,
        mean_difference: md,
        t,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn matches_hand_computed_t() {
        // d = [1, 2, 3, 4]: mean 2.5, sd = sqrt(5/3), t = 2.5 / (sd / 2) = 3.8729833...
        let a = [2.0, 4.0, 6.0, 8.0];
        let b = [1.0, 2.0, 3.0, 4.0];
        let r = paired_t_greater(&a, &b).unwrap();
        assert_abs_diff_eq!(r.t, 2.5 / ((5.0f64 / 3.0).sqrt() / 2.0), epsilon = 1e-12);
        // Upper tail of t(3) at 3.8729833 is 0.015230...
        assert_abs_diff_eq!(r.p_value, 0.01523, epsilon = 1e-4);
    }

    #[test]
    fn symmetric_at_zero() {
        let r = paired_t_greater(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(r.p_value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn zero_spread() {
        assert_eq!(paired_t_greater(&[2.0, 3.0], &[1.0, 2.0]).unwrap().p_value, 0.0);
        assert_eq!(paired_t_greater(&[1.0, 2.0], &[1.0, 2.0]).unwrap().p_value, 1.0);
        assert!(paired_t_greater(&[1.0], &[0.0]).is_none());
    }
}
