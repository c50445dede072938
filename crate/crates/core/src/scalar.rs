//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display, LowerExp};
use std::num::ParseFloatError;
use std::str::FromStr;

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Only nalgebra's `RealField` supplies the elementary functions, so method
/// calls such as `x.sqrt()` stay unambiguous in generic code.
pub trait Real:
    RealField
    + Copy
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + LowerExp
    + FromStr<Err = ParseFloatError>
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Every `f64` has an `f32` approximation, so this never fails
    /// for the two supported types.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::lit(n as f64)
    }

    #[inline]
    fn infinity() -> Self {
        Self::lit(f64::INFINITY)
    }

    #[inline]
    fn epsilon() -> Self {
        Self::default_epsilon()
    }

    /// Cheap finiteness test that does not rely on `num_traits::Float`.
    #[inline]
    fn is_finite_val(self) -> bool {
        self.to_f64().is_some_and(f64::is_finite)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Periodic difference `a - b` folded into `[-period/2, period/2)`.
pub fn wrap_diff<T: Real>(delta: T, period: T) -> T {
    let half = period * T::lit(0.5);
    let shifted = delta + half;
    shifted - period * (shifted / period).floor() - half
}

/// Folds `x` into `[lo, hi)`.
pub fn wrap_into<T: Real>(x: T, lo: T, hi: T) -> T {
    let period = hi - lo;
    let y = x - lo;
    let folded = y - period * (y / period).floor();
    // floating rounding can land exactly on `period`
    let folded = if folded >= period { T::zero() } else { folded };
    folded + lo
}
