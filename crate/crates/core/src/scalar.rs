//! Floating-point scalar abstraction shared by every real-valued routine.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used for probabilities, expected counts and variational
/// parameters. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Default
    + Send
    + Sync
    + 'static
{
    /// Significant decimal digits written by snapshot files.
    const SNAPSHOT_DIGITS: usize;

    /// Threshold below which the SCVB0 scale coefficient is folded back
    /// into its dummy matrix.
    fn scale_floor() -> Self;

    /// Probability substituted for an exact zero when taking logs of
    /// held-out likelihoods.
    fn likelihood_floor() -> Self;

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    #[inline]
    fn of_count(v: u64) -> Self {
        Self::from_u64(v).expect("count is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    const SNAPSHOT_DIGITS: usize = 17;

    fn scale_floor() -> Self {
        1e-100
    }

    fn likelihood_floor() -> Self {
        1e-300
    }
}

impl Scalar for f32 {
    const SNAPSHOT_DIGITS: usize = 9;

    fn scale_floor() -> Self {
        1e-20
    }

    fn likelihood_floor() -> Self {
        f32::MIN_POSITIVE
    }
}

/// Normalizes `v` in place so it sums to one. Returns the pre-normalization
/// total.
pub fn normalize_in_place<F: Scalar>(v: &mut [F]) -> F {
    let total: F = v.iter().copied().sum();
    if total > F::zero() && total.is_finite() {
        for x in v.iter_mut() {
            *x /= total;
        }
    } else {
        let u = F::one() / F::of_count(v.len() as u64);
        v.iter_mut().for_each(|x| *x = u);
    }
    total
}
