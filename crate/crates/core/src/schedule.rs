//! Robbins–Monro step-size schedules.
//!
//! Both stochastic backends blend a running statistic toward a noisy
//! estimate with weight `rho_t`. Convergence needs `sum rho_t = inf` and
//! `sum rho_t^2 < inf`, which a polynomial decay `(t + offset)^-kappa`
//! satisfies exactly when `kappa` lies in `(0.5, 1]`.

use crate::error::{BtmError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    /// `rho_t = (t + offset)^-kappa`.
    Polynomial { offset: f64, kappa: f64 },
    /// Fixed step, used for stress tests of the decay arithmetic.
    Constant(f64),
}

impl StepSchedule {
    /// SCVB0 schedule `1 / (t + tau)^kappa`.
    pub fn scvb0(tau: f64, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(BtmError::InvalidHyperparameter(format!("tau = {tau} must be >= 0")));
        }
        Ok(StepSchedule::Polynomial { offset: tau, kappa })
    }

    /// Per-word SDM schedule `1 / (1 + t(w))^kappa`.
    pub fn sdm(kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(StepSchedule::Polynomial { offset: 1.0, kappa })
    }

    #[inline]
    pub fn rho<F: Scalar>(&self, t: u64) -> F {
        match *self {
            StepSchedule::Polynomial { offset, kappa } => {
                let base = F::of(t as f64 + offset);
                if base <= F::zero() {
                    F::one()
                } else {
                    base.powf(F::of(-kappa)).min(F::one())
                }
            }
            StepSchedule::Constant(r) => F::of(r),
        }
    }

    /// Whether the schedule satisfies the Robbins–Monro conditions.
    pub fn is_robbins_monro(&self) -> bool {
        match *self {
            StepSchedule::Polynomial { kappa, .. } => kappa > 0.5 && kappa <= 1.0,
            StepSchedule::Constant(_) => false,
        }
    }
}

pub(crate) fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.5 && kappa <= 1.0 {
        Ok(())
    } else {
        Err(BtmError::InvalidHyperparameter(format!("kappa = {kappa} must lie in (0.5, 1]")))
    }
}

/// Prefix sums `(sum rho_t, sum rho_t^2)` over `t in [0, n)`.
pub fn prefix_sums(schedule: &StepSchedule, n: u64) -> (f64, f64) {
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for t in 0..n {
        let r: f64 = schedule.rho(t);
        s1 += r;
        s2 += r * r;
    }
    (s1, s2)
}

/// Integral bounds for the tail `sum_{t >= n} (t + c)^-p`, `p > 1`:
/// returns `(lower, upper)` from comparing the sum with
/// `integral (x + c)^-p dx`.
pub fn power_tail_bounds(offset: f64, p: f64, n: u64) -> (f64, f64) {
    assert!(p > 1.0);
    let x = n as f64 + offset;
    let lower = (x).powf(1.0 - p) / (p - 1.0);
    let upper = lower + x.powf(-p);
    (lower, upper)
}
