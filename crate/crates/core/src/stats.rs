//! Order statistics and the F distribution.
//!
//! The F quantile is obtained by inverting the regularized incomplete beta
//! function, which is evaluated with the modified Lentz continued fraction.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Linear-interpolation percentile at zero-based rank `p * (n - 1)`.
///
/// `p = 0` gives the minimum and `p = 1` the maximum.
pub fn percentile(sample: &[f64], p: f64) -> Result<f64> {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

/// As [`percentile`], for a sample already sorted ascending.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("percentile fraction {p} outside [0, 1]")));
    }
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi || frac == 0.0 {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Median; the mean of the two central values for even-length samples.
pub fn median(sample: &[f64]) -> Result<f64> {
    percentile(sample, 0.5)
}

/// Five-number summary plus the 95th percentile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub max: f64,
}

impl OrderStats {
    pub fn of(sample: &[f64]) -> Result<Self> {
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let at = |p| percentile_sorted(&sorted, p);
        Ok(OrderStats {
            min: at(0.0)?,
            p25: at(0.25)?,
            median: at(0.5)?,
            p75: at(0.75)?,
            p95: at(0.95)?,
            max: at(1.0)?,
        })
    }
}

/// Natural log of the gamma function (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let series = COEF[1..]
        .iter()
        .enumerate()
        .fold(COEF[0], |acc, (i, c)| acc + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + series.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=1000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// Solves I_x(a, b) = p for x, by safeguarded Newton iteration inside a
/// shrinking bisection bracket.
pub fn beta_inc_inv(a: f64, b: f64, p: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let lnb = ln_beta(a, b);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = 0.5;
    for _ in 0..300 {
        let f = beta_inc(a, b, x) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - lnb).exp();
        let mut next = x - f / density;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= f64::EPSILON * hi {
            return next;
        }
        x = next;
    }
    x
}

/// Cumulative distribution of the F distribution.
pub fn f_cdf(x: f64, df1: f64, df2: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    beta_inc(df1 / 2.0, df2 / 2.0, df1 * x / (df1 * x + df2))
}

/// Quantile of the F distribution with (`df1`, `df2`) degrees of freedom.
pub fn f_quantile(p: f64, df1: f64, df2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
    }
    if !(df1 > 0.0 && df2 > 0.0) {
        return Err(Error::InvalidInput(format!("degrees of freedom ({df1}, {df2}) must be positive")));
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    let (a, b) = (df1 / 2.0, df2 / 2.0);
    let x = beta_inc_inv(a, b, p);
    if x <= 0.5 {
        return Ok(df2 * x / (df1 * (1.0 - x)));
    }
    // Near x = 1 the 1 − x above cancels; solve for y = 1 − x directly
    // using I_x(a, b) = 1 − I_{1−x}(b, a).
    let y = beta_inc_inv(b, a, 1.0 - p);
    Ok(df2 * (1.0 - y) / (df1 * y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn percentile_fixtures() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(), 3.0);
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(percentile(&[7.0], p).unwrap(), 7.0);
        }
        // rank 2.85 -> 30 + 0.85 * 10
        assert_relative_eq!(percentile(&[40.0, 10.0, 30.0, 20.0], 0.95).unwrap(), 38.5, epsilon = 1e-12);
        assert!(matches!(percentile(&[], 0.5), Err(Error::EmptySample)));
        assert!(percentile(&[1.0], 1.5).is_err());
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    }

    #[test]
    fn order_stats_of_constant_sample() {
        let s = OrderStats::of(&[0.25; 7]).unwrap();
        for v in [s.min, s.p25, s.median, s.p75, s.p95, s.max] {
            assert_eq!(v, 0.25);
        }
        assert_eq!(OrderStats::of(&[1e-3, 2e-3, 3e-3, 4e-3, 5e-3]).unwrap().median, 3e-3);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20u32 {
            assert_relative_eq!(ln_gamma(n as f64), fact.ln(), epsilon = 1e-12, max_relative = 1e-13);
            fact *= n as f64;
        }
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-13);
    }

    #[test]
    fn beta_inc_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 - (1 - x)^b
        for x in [0.01, 0.3, 0.5, 0.77, 0.99] {
            assert_relative_eq!(beta_inc(1.0, 1.0, x), x, epsilon = 1e-14);
            assert_relative_eq!(beta_inc(3.5, 1.0, x), x.powf(3.5), epsilon = 1e-14);
            assert_relative_eq!(beta_inc(1.0, 2.5, x), 1.0 - (1.0 - x).powf(2.5), epsilon = 1e-14);
        }
    }

    #[test]
    fn f_quantile_closed_form_for_two_two() {
        // F(2, 2) has cdf x / (1 + x), so the quantile is p / (1 - p).
        for p in [0.025, 0.5, 0.9, 0.975] {
            assert_relative_eq!(f_quantile(p, 2.0, 2.0).unwrap(), p / (1.0 - p), max_relative = 1e-10);
        }
        assert_eq!(f_quantile(0.0, 3.0, 4.0).unwrap(), 0.0);
        assert!(f_quantile(1.0, 3.0, 4.0).unwrap().is_infinite());
        assert!(f_quantile(0.5, 0.0, 4.0).is_err());
    }

    proptest! {
        #[test]
        fn percentile_is_monotone_and_bounded(
            sample in proptest::collection::vec(-1e6f64..1e6, 1..50),
            p in 0.0f64..=1.0,
            q in 0.0f64..=1.0,
        ) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            let a = percentile(&sample, lo).unwrap();
            let b = percentile(&sample, hi).unwrap();
            prop_assert!(a <= b);
            let min = sample.iter().copied().fold(f64::INFINITY, f64::min);
            let max = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min <= a && b <= max);
        }

        #[test]
        fn f_quantile_inverts_cdf(p in 0.001f64..0.999, d1 in 0.5f64..60.0, d2 in 0.5f64..60.0) {
            let q = f_quantile(p, d1, d2).unwrap();
            prop_assert!((f_cdf(q, d1, d2) - p).abs() < 1e-10);
        }
    }
}
