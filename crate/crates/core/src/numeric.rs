//! Scalar numeric helpers: compensated summation, log-factorials, and
//! small-angle-stable trigonometric ratios.
//!
//! The closed-form element sums alternate in sign with factorially growing
//! terms, so they are accumulated in log-magnitude/phase form, sorted by
//! descending magnitude and added with Neumaier compensation.

use crate::constants::{LINEAR_FACTORIAL_LIMIT, LOG_FACTORIAL_LIMIT};
use crate::C64;
use std::sync::OnceLock;

/// Neumaier-compensated accumulator for `f64`.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.comp += (self.sum - t) + value;
        } else {
            self.comp += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of complex terms, largest magnitude first.
pub fn compensated_sum(terms: &mut [C64]) -> C64 {
    terms.sort_by(|a, b| {
        b.norm_sqr()
            .partial_cmp(&a.norm_sqr())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut re = KahanSum::new();
    let mut im = KahanSum::new();
    for t in terms.iter() {
        re.add(t.re);
        im.add(t.im);
    }
    C64::new(re.value(), im.value())
}

/// One term of a sum carried as `exp(log_mag) * phase` with `|phase| = 1`
/// (or 0 for an exactly vanishing term).
#[derive(Debug, Clone, Copy)]
pub struct LogTerm {
    pub log_mag: f64,
    pub phase: C64,
}

impl LogTerm {
    pub const ZERO: LogTerm = LogTerm {
        log_mag: f64::NEG_INFINITY,
        phase: C64::new(0.0, 0.0),
    };
}

/// Sum log-scale terms: scale out the largest magnitude, materialize, add in
/// descending order with compensation. Safe for magnitudes far outside the
/// `f64` range as long as the *result* is representable.
pub fn sum_log_terms(terms: &mut Vec<LogTerm>) -> C64 {
    terms.retain(|t| t.log_mag.is_finite());
    if terms.is_empty() {
        return C64::new(0.0, 0.0);
    }
    let max_log = terms
        .iter()
        .map(|t| t.log_mag)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut materials: Vec<C64> = terms
        .iter()
        .map(|t| t.phase * (t.log_mag - max_log).exp())
        .collect();
    compensated_sum(&mut materials) * max_log.exp()
}

fn log_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LOG_FACTORIAL_LIMIT + 1);
        t.push(0.0);
        let mut acc = KahanSum::new();
        for n in 1..=LOG_FACTORIAL_LIMIT {
            acc.add((n as f64).ln());
            t.push(acc.value());
        }
        t
    })
}

/// `ln(n!)`, tabulated. `None` beyond the configured table.
pub fn log_factorial(n: usize) -> Option<f64> {
    log_factorial_table().get(n).copied()
}

/// `n!` in linear scale, valid up to [`LINEAR_FACTORIAL_LIMIT`].
pub fn factorial(n: usize) -> Option<f64> {
    if n > LINEAR_FACTORIAL_LIMIT {
        return None;
    }
    Some(log_factorial(n)?.exp())
}

/// `sin(x)/x`, continuous through 0.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// `(1 - cos(x))/x`, continuous through 0. Uses the cancellation-free
/// half-angle form `2 sin^2(x/2) / x`.
pub fn cosc(x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let s = (x / 2.0).sin();
    2.0 * s * s / x
}

/// `(x - sin(x))/x^2`, continuous through 0.
pub fn cub(x: f64) -> f64 {
    if x.abs() < 0.1 {
        let x2 = x * x;
        x * (1.0 / 6.0
            + x2 * (-1.0 / 120.0
                + x2 * (1.0 / 5040.0 + x2 * (-1.0 / 362_880.0 + x2 / 39_916_800.0))))
    } else {
        (x - x.sin()) / (x * x)
    }
}

/// Least-squares fit `y ~ a + b x`; returns `(a, b, r_squared)`.
///
/// `r_squared` is defined as 0 when the data has (numerically) no variance,
/// so a constant series never reports a perfect fit.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    assert!(n >= 2.0, "fit needs at least two points");
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        sxx += (xi - mx) * (xi - mx);
        sxy += (xi - mx) * (yi - my);
        syy += (yi - my) * (yi - my);
    }
    if sxx <= 0.0 {
        return (my, 0.0, 0.0);
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let scale = y.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    if syy <= 1e-24 * scale * scale {
        return (a, b, 0.0);
    }
    let ss_res = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let r = yi - (a + b * xi);
            r * r
        })
        .sum::<f64>();
    (a, b, 1.0 - ss_res / syy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_cancelled_tail() {
        // 1 + 1e-16 repeated: naive summation loses the tail entirely.
        let mut k = KahanSum::new();
        k.add(1.0);
        for _ in 0..1000 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1000.0 * 1e-16)).abs() < 1e-18);
    }

    #[test]
    fn log_terms_match_direct_sum_in_range() {
        let mut terms: Vec<LogTerm> = (0..20)
            .map(|k| {
                let v = C64::new(0.3, -0.1 * k as f64);
                LogTerm {
                    log_mag: v.norm().ln(),
                    phase: v / v.norm(),
                }
            })
            .collect();
        let direct: C64 = (0..20).map(|k| C64::new(0.3, -0.1 * k as f64)).sum();
        let summed = sum_log_terms(&mut terms);
        assert!((summed - direct).norm() < 1e-12);
    }

    #[test]
    fn factorial_tables_agree_with_products() {
        let mut f = 1.0f64;
        for n in 1..=20usize {
            f *= n as f64;
            assert!((factorial(n).unwrap() - f).abs() / f < 1e-12);
            assert!((log_factorial(n).unwrap() - f.ln()).abs() < 1e-10);
        }
        assert!(factorial(LINEAR_FACTORIAL_LIMIT + 1).is_none());
        assert!(log_factorial(LOG_FACTORIAL_LIMIT + 1).is_none());
    }

    #[test]
    fn trig_ratios_match_stable_references() {
        // The naive formulas cancel catastrophically near 0, so the oracles
        // switch to long independent Taylor series there.
        let cosc_oracle = |x: f64| {
            if x.abs() >= 0.5 {
                (1.0 - x.cos()) / x
            } else {
                // (1 - cos x)/x = sum_{k>=1} (-1)^{k+1} x^{2k-1}/(2k)!
                let mut acc = 0.0;
                for k in (1..=12).rev() {
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    acc += sign * x.powi(2 * k - 1) / factorial(2 * k as usize).unwrap();
                }
                acc
            }
        };
        let cub_oracle = |x: f64| {
            if x.abs() >= 0.5 {
                (x - x.sin()) / (x * x)
            } else {
                // x - sin x = sum_{k>=1} (-1)^{k+1} x^{2k+1}/(2k+1)!
                let mut acc = 0.0;
                for k in (1..=12).rev() {
                    let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                    acc += sign * x.powi(2 * k + 1) / factorial(2 * k as usize + 1).unwrap();
                }
                acc / (x * x)
            }
        };
        for &x in &[1e-9, 1e-6, 1e-4, 2e-4, 1e-3, 9e-3, 0.1, 2.0] {
            for &s in &[x, -x] {
                assert!((sinc(s) - s.sin() / s).abs() < 1e-13, "sinc({s})");
                assert!((cosc(s) - cosc_oracle(s)).abs() < 1e-15, "cosc({s})");
                assert!((cub(s) - cub_oracle(s)).abs() < 1e-14, "cub({s})");
            }
        }
        assert_eq!(sinc(0.0), 1.0);
        assert_eq!(cosc(0.0), 0.0);
        assert_eq!(cub(0.0), 0.0);
    }

    #[test]
    fn linear_fit_recovers_exact_line_and_flags_constant() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&v| 2.5 - 0.7 * v).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        assert!((a - 2.5).abs() < 1e-12 && (b + 0.7).abs() < 1e-12);
        assert!(r2 > 1.0 - 1e-12);

        let flat = vec![1.0; 50];
        let (_, slope, r2_flat) = linear_fit(&x, &flat);
        assert!(slope.abs() < 1e-12);
        assert_eq!(r2_flat, 0.0);
    }
}
