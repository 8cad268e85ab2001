//! Positive quantities carried as their natural logarithm.
//!
//! Expected persistence times are sums of terms that span hundreds of orders
//! of magnitude, so every accumulation in the crate happens here, anchored at
//! the running maximum.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, Div, Mul};

use serde::{Deserialize, Serialize};

/// Natural logarithm of a non-negative extended real.
///
/// `-inf` encodes zero and `+inf` encodes an infinite quantity.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogWeight(f64);

impl LogWeight {
    pub const ZERO: LogWeight = LogWeight(f64::NEG_INFINITY);
    pub const ONE: LogWeight = LogWeight(0.0);
    pub const INFINITY: LogWeight = LogWeight(f64::INFINITY);

    pub const fn from_ln(ln: f64) -> Self {
        LogWeight(ln)
    }

    /// Panics on negative input; a weight is never negative.
    pub fn from_value(value: f64) -> Self {
        assert!(
            !(value < 0.0),
            "LogWeight::from_value: negative value {value}"
        );
        LogWeight(value.ln())
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    /// The linear value; overflows to `inf` above ~1.8e308.
    pub fn value(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn is_infinite(self) -> bool {
        self.0 == f64::INFINITY
    }

    /// True when the linear value is representable as a finite `f64`.
    pub fn fits_f64(self) -> bool {
        self.0.is_finite() && self.0.exp().is_finite() || self.is_zero()
    }
}

impl fmt::Display for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exp({})", self.0)
    }
}

impl Mul for LogWeight {
    type Output = LogWeight;

    fn mul(self, rhs: LogWeight) -> LogWeight {
        // 0 * inf is left as NaN, like direct arithmetic.
        LogWeight(self.0 + rhs.0)
    }
}

impl Div for LogWeight {
    type Output = LogWeight;

    fn div(self, rhs: LogWeight) -> LogWeight {
        LogWeight(self.0 - rhs.0)
    }
}

impl Add for LogWeight {
    type Output = LogWeight;

    fn add(self, rhs: LogWeight) -> LogWeight {
        LogWeight(log_add_exp(self.0, rhs.0))
    }
}

impl Sum for LogWeight {
    fn sum<I: Iterator<Item = LogWeight>>(iter: I) -> LogWeight {
        let mut acc = LogSumExp::new();
        for w in iter {
            acc.push(w.0);
        }
        acc.total()
    }
}

/// `ln(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        return f64::NAN;
    }
    let (hi, lo) = match a.partial_cmp(&b) {
        Some(Ordering::Less) => (b, a),
        _ => (a, b),
    };
    if hi == f64::INFINITY || lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Streaming log-sum-exp, rescaled whenever a new maximum arrives.
#[derive(Clone, Copy, Debug)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
    nan: bool,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumExp {
    pub fn new() -> Self {
        LogSumExp {
            max: f64::NEG_INFINITY,
            scaled: 0.0,
            nan: false,
        }
    }

    pub fn push(&mut self, x: f64) {
        if x.is_nan() {
            self.nan = true;
        } else if x == f64::NEG_INFINITY || self.max == f64::INFINITY {
        } else if x == f64::INFINITY {
            self.max = f64::INFINITY;
        } else if x > self.max {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.scaled += (x - self.max).exp();
        }
    }

    pub fn ln(&self) -> f64 {
        if self.nan {
            f64::NAN
        } else if self.max == f64::INFINITY || self.max == f64::NEG_INFINITY {
            self.max
        } else {
            self.max + self.scaled.ln()
        }
    }

    pub fn total(&self) -> LogWeight {
        LogWeight(self.ln())
    }
}

/// `ln(sum(exp(x_i)))`; `-inf` for an empty input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = LogSumExp::new();
    for x in xs {
        acc.push(x);
    }
    acc.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identities() {
        assert_eq!((LogWeight::ZERO + LogWeight::ONE).ln(), 0.0);
        assert!((LogWeight::INFINITY + LogWeight::ONE).is_infinite());
        assert_eq!(log_sum_exp(std::iter::empty()), f64::NEG_INFINITY);
        assert!(log_add_exp(f64::NAN, 1.0).is_nan());
        let two = LogWeight::ONE + LogWeight::ONE;
        assert!((two.value() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn survives_huge_exponents() {
        let lse = log_sum_exp([1000.0, 1000.0, -1000.0]);
        assert!((lse - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(!LogWeight::from_ln(1000.0).fits_f64());
        assert!(LogWeight::from_ln(700.0).fits_f64());
    }

    proptest! {
        #[test]
        fn matches_direct_arithmetic(xs in prop::collection::vec(1e-200f64..1e200, 1..40)) {
            let direct: f64 = xs.iter().sum();
            prop_assume!(direct.is_finite());
            let via_log: LogWeight = xs.iter().map(|&x| LogWeight::from_value(x)).sum();
            prop_assert!((via_log.value() - direct).abs() <= 1e-12 * direct);

            let prod_direct = xs[0] * xs[xs.len() - 1];
            let prod_log = LogWeight::from_value(xs[0]) * LogWeight::from_value(xs[xs.len() - 1]);
            if prod_direct.is_normal() {
                prop_assert!((prod_log.value() - prod_direct).abs() <= 1e-12 * prod_direct);
            }
        }

        #[test]
        fn order_insensitive(mut xs in prop::collection::vec(-700f64..700.0, 1..200)) {
            let unsorted = log_sum_exp(xs.iter().copied());
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let sorted = log_sum_exp(xs.iter().copied());
            prop_assert!(((unsorted - sorted) / sorted.abs().max(1.0)).abs() <= 1e-12);
        }
    }
}
