//! Categorical draws and the uniform topic initialization shared by the
//! Gibbs-based backends.

use rand::Rng;

use crate::scalar::Scalar;

/// Draws an index proportional to `weights` (need not be normalized).
///
/// The uniform variate is scaled to the total mass and the first index whose
/// cumulative sum strictly exceeds it is returned, so boundary ties resolve
/// to the lowest index.
pub fn sample_categorical<F: Scalar, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> usize {
    debug_assert!(!weights.is_empty());
    let total: F = weights.iter().copied().sum();
    let u = F::of(rng.random::<f64>()) * total;
    let mut acc = F::zero();
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // u rounded up to the total; fall back to the last positive weight
    weights
        .iter()
        .rposition(|&w| w > F::zero())
        .unwrap_or(weights.len() - 1)
}

/// Uniform topic in `[0, k)`.
#[inline]
pub fn uniform_topic<R: Rng + ?Sized>(k: usize, rng: &mut R) -> usize {
    rng.random_range(0..k)
}
