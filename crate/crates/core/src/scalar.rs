//! Scalar abstraction shared by every numerical routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::num::ParseFloatError;
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar the library is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr<Err = ParseFloatError>
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `ln(1 + e^x)` without overflow.
    #[inline]
    fn softplus(self) -> Self {
        if self > Self::zero() {
            self + (-self).exp().ln_1p()
        } else {
            self.exp().ln_1p()
        }
    }

    /// `ln(e^a + e^b)`.
    #[inline]
    fn log_add_exp(self, other: Self) -> Self {
        if self == Self::neg_infinity() {
            return other;
        }
        if other == Self::neg_infinity() {
            return self;
        }
        let (hi, lo) = if self > other { (self, other) } else { (other, self) };
        hi + (lo - hi).exp().ln_1p()
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Pairwise (cascade) summation. The result depends only on the order of
/// `values`, never on how callers partitioned the work that produced them.
pub fn pairwise_sum<T: Real>(values: &[T]) -> T {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        let mut acc = T::zero();
        for &v in values {
            acc += v;
        }
        acc
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Numerically stable `ln Σ exp(x_i)`.
pub fn log_sum_exp<T: Real>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || !max.is_finite() {
        return max;
    }
    let shifted: Vec<T> = values.iter().map(|&v| (v - max).exp()).collect();
    max + pairwise_sum(&shifted).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_direct_form() {
        for &x in &[-30.0f64, -1.0, 0.0, 0.5, 3.0, 40.0] {
            let direct = (1.0 + x.exp()).ln();
            assert!((x.softplus() - direct).abs() < 1e-12);
        }
        assert_eq!(1000.0f64.softplus(), 1000.0);
    }

    #[test]
    fn log_sum_exp_handles_large_values() {
        let v = [1000.0f64, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500500.0);
    }
}
