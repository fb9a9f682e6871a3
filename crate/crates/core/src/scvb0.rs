//! Zero-order stochastic collapsed variational Bayes.
//!
//! Expected counts `N_k` and `N_{w|k}` are blended toward one-biterm
//! estimates `|B| z_{i,k}` with step `rho_t`. The word-topic matrix is held
//! as `N_{w|k} = scale * A[w][k]`: the uniform `(1 - rho_t)` decay only
//! touches `scale`, and the two words of the current biterm are written
//! explicitly, so one step costs O(K). `scale` shrinks geometrically; when
//! it drops below [`Scalar::scale_floor`] it is folded back into `A`.

use rand::Rng;

use crate::corpus::Biterm;
use crate::error::{BtmError, Result};
use crate::model::{Hyperparams, ModelParams};
use crate::scalar::Scalar;
use crate::schedule::StepSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct Scvb0State<F> {
    topics: usize,
    vocab_size: usize,
    n_k: Vec<F>,
    scale: F,
    /// Dummy matrix, word-major.
    dummy: Vec<F>,
    step: u64,
    schedule: StepSchedule,
    corpus_size: F,
    /// Fold `scale` back into the dummy matrix when it gets small.
    pub guard: bool,
    /// Decay every entry explicitly instead of through `scale`.
    pub dense: bool,
    renormalizations: u64,
}

impl<F: Scalar> Scvb0State<F> {
    pub fn zeros(topics: usize, vocab_size: usize, schedule: StepSchedule, corpus_size: u64) -> Self {
        Scvb0State {
            topics,
            vocab_size,
            n_k: vec![F::zero(); topics],
            scale: F::one(),
            dummy: vec![F::zero(); topics * vocab_size],
            step: 0,
            schedule,
            corpus_size: F::of_count(corpus_size),
            guard: true,
            dense: false,
            renormalizations: 0,
        }
    }

    /// `N_{w|k} ~ U(0, 1)` with `N_k = sum_w N_{w|k} / 2`, which breaks the
    /// topic symmetry of the all-zero state.
    pub fn random_init<R: Rng + ?Sized>(
        topics: usize,
        vocab_size: usize,
        schedule: StepSchedule,
        corpus_size: u64,
        rng: &mut R,
    ) -> Self {
        let mut s = Self::zeros(topics, vocab_size, schedule, corpus_size);
        for v in s.dummy.iter_mut() {
            *v = F::of(rng.random::<f64>());
        }
        for k in 0..topics {
            let row: F = (0..vocab_size).map(|w| s.dummy[w * topics + k]).sum();
            s.n_k[k] = row / F::of(2.0);
        }
        s
    }

    /// State with the given expected counts; `n_wk[k][w]`.
    pub fn from_counts(n_k: Vec<F>, n_wk: &[Vec<F>], schedule: StepSchedule, corpus_size: u64) -> Result<Self> {
        let topics = n_k.len();
        if n_wk.len() != topics {
            return Err(BtmError::DimensionMismatch("n_wk rows must match n_k".into()));
        }
        let vocab_size = n_wk.first().map_or(0, Vec::len);
        let mut s = Self::zeros(topics, vocab_size, schedule, corpus_size);
        s.n_k = n_k;
        for (k, row) in n_wk.iter().enumerate() {
            if row.len() != vocab_size {
                return Err(BtmError::DimensionMismatch("ragged n_wk".into()));
            }
            for (w, &v) in row.iter().enumerate() {
                s.dummy[w * topics + k] = v;
            }
        }
        Ok(s)
    }

    /// Sets the raw scale coefficient and dummy matrix (word-major).
    pub fn set_raw(&mut self, scale: F, dummy: Vec<F>) -> Result<()> {
        if dummy.len() != self.topics * self.vocab_size {
            return Err(BtmError::DimensionMismatch("dummy matrix size".into()));
        }
        self.scale = scale;
        self.dummy = dummy;
        Ok(())
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn n_k(&self) -> &[F] {
        &self.n_k
    }

    /// Logical `N_{w|k}`.
    #[inline]
    pub fn n_wk(&self, w: usize, k: usize) -> F {
        self.scale * self.dummy[w * self.topics + k]
    }

    pub fn scale(&self) -> F {
        self.scale
    }

    pub fn dummy(&self) -> &[F] {
        &self.dummy
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn corpus_size(&self) -> F {
        self.corpus_size
    }

    pub fn set_corpus_size(&mut self, n: u64) {
        self.corpus_size = F::of_count(n);
    }

    pub fn schedule(&self) -> StepSchedule {
        self.schedule
    }

    pub fn renormalizations(&self) -> u64 {
        self.renormalizations
    }

    /// Folds `scale` into the dummy matrix when it is below the floor.
    pub fn renormalize_scale(&mut self) {
        if self.scale < F::scale_floor() {
            self.fold_scale();
        }
    }

    fn fold_scale(&mut self) {
        let s = self.scale;
        self.dummy.iter_mut().for_each(|a| *a *= s);
        self.scale = F::one();
        self.renormalizations += 1;
    }

    /// Largest relative gap between `sum_w N_{w|k}` and `2 N_k`.
    pub fn coupling_drift(&self) -> F {
        let mut worst = F::zero();
        for k in 0..self.topics {
            let s: F = (0..self.vocab_size).map(|w| self.n_wk(w, k)).sum();
            let two = F::of(2.0) * self.n_k[k];
            let denom = two.abs().max(F::min_positive_value());
            worst = worst.max((s - two).abs() / denom);
        }
        worst
    }

    pub fn heap_bytes(&self) -> usize {
        std::mem::size_of::<F>() * (self.n_k.capacity() + self.dummy.capacity())
    }
}

/// Normalized responsibilities
/// `(N_k + gamma)(N_{w1|k} + beta)(N_{w2|k} + beta) / ((2N_k + W beta)(2N_k + W beta + 1))`,
/// with the current biterm not subtracted.
pub fn scvb0_responsibility_into<F: Scalar>(state: &Scvb0State<F>, hyper: &Hyperparams, b: Biterm, out: &mut [F]) {
    let gamma = F::of(hyper.gamma);
    let beta = F::of(hyper.beta);
    let w_beta = F::of_count(state.vocab_size as u64) * beta;
    let two = F::of(2.0);
    let kk = state.topics;
    let r1 = &state.dummy[b.w1() * kk..(b.w1() + 1) * kk];
    let r2 = &state.dummy[b.w2() * kk..(b.w2() + 1) * kk];
    for k in 0..kk {
        let dot = two * state.n_k[k] + w_beta;
        out[k] = (state.n_k[k] + gamma) * (state.scale * r1[k] + beta) * (state.scale * r2[k] + beta)
            / (dot * (dot + F::one()));
    }
    crate::scalar::normalize_in_place(out);
}

pub fn scvb0_responsibility<F: Scalar>(state: &Scvb0State<F>, hyper: &Hyperparams, b: Biterm) -> Vec<F> {
    let mut out = vec![F::zero(); state.topics];
    scvb0_responsibility_into(state, hyper, b, &mut out);
    out
}

/// Blends the state toward the one-biterm estimate with weight `rho_t` and
/// advances `t`. A self-pair puts `2 |B| z_k` on its single word.
pub fn scvb0_step_with<F: Scalar>(state: &mut Scvb0State<F>, resp: &[F], b: Biterm) {
    let rho: F = state.schedule.rho(state.step);
    let keep = F::one() - rho;
    let kk = state.topics;
    for k in 0..kk {
        state.n_k[k] = keep * state.n_k[k] + rho * state.corpus_size * resp[k];
    }
    let words: &[(usize, F)] = if b.is_self_pair() {
        &[(b.w1(), F::of(2.0))]
    } else {
        &[(b.w1(), F::one()), (b.w2(), F::one())]
    };
    if state.dense {
        state.dummy.iter_mut().for_each(|a| *a *= keep);
        for &(w, mult) in words {
            for k in 0..kk {
                state.dummy[w * kk + k] += rho * mult * state.corpus_size * resp[k] / state.scale;
            }
        }
    } else if keep <= F::zero() {
        state.dummy.iter_mut().for_each(|a| *a = F::zero());
        state.scale = F::one();
        for &(w, mult) in words {
            for k in 0..kk {
                state.dummy[w * kk + k] = mult * state.corpus_size * resp[k];
            }
        }
    } else {
        state.scale *= keep;
        let inv = rho / state.scale;
        for &(w, mult) in words {
            for k in 0..kk {
                state.dummy[w * kk + k] += inv * mult * state.corpus_size * resp[k];
            }
        }
        if state.guard {
            state.renormalize_scale();
        }
    }
    state.step += 1;
}

/// Responsibility followed by the stochastic update.
pub fn scvb0_step<F: Scalar>(state: &mut Scvb0State<F>, hyper: &Hyperparams, b: Biterm) -> Result<()> {
    b.check(state.vocab_size)?;
    let resp = scvb0_responsibility(state, hyper, b);
    scvb0_step_with(state, &resp, b);
    Ok(())
}

/// `theta_k ∝ N_k + gamma`, `phi_{k,w} ∝ N_{w|k} + beta`.
pub fn scvb0_restore<F: Scalar>(state: &Scvb0State<F>, hyper: &Hyperparams) -> ModelParams<F> {
    ModelParams::from_masses(
        &state.n_k,
        state.vocab_size,
        |k, w| state.n_wk(w, k),
        F::of(hyper.gamma),
        F::of(hyper.beta),
    )
}

/// One-pass SCVB0 trainer.
#[derive(Debug, Clone)]
pub struct Scvb0Btm<F> {
    hyper: Hyperparams,
    state: Scvb0State<F>,
    buf: Vec<F>,
}

impl<F: Scalar> Scvb0Btm<F> {
    /// Randomly initialized state for a stream of `corpus_size` biterms.
    pub fn new<R: Rng + ?Sized>(hyper: Hyperparams, vocab_size: usize, corpus_size: u64, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let schedule = StepSchedule::scvb0(hyper.tau, hyper.kappa_scvb0)?;
        let state = Scvb0State::random_init(hyper.topics, vocab_size, schedule, corpus_size, rng);
        let buf = vec![F::zero(); hyper.topics];
        Ok(Scvb0Btm { hyper, state, buf })
    }

    pub fn from_state(hyper: Hyperparams, state: Scvb0State<F>) -> Self {
        let buf = vec![F::zero(); state.topics];
        Scvb0Btm { hyper, state, buf }
    }

    #[inline]
    pub fn process(&mut self, b: Biterm) -> Result<()> {
        b.check(self.state.vocab_size)?;
        scvb0_responsibility_into(&self.state, &self.hyper, b, &mut self.buf);
        scvb0_step_with(&mut self.state, &self.buf, b);
        Ok(())
    }

    pub fn state(&self) -> &Scvb0State<F> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut Scvb0State<F> {
        &mut self.state
    }

    pub fn params(&self) -> ModelParams<F> {
        scvb0_restore(&self.state, &self.hyper)
    }

    pub fn heap_bytes(&self) -> usize {
        self.state.heap_bytes() + std::mem::size_of::<F>() * self.buf.capacity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn sched() -> StepSchedule {
        StepSchedule::scvb0(1000.0, 0.8).unwrap()
    }

    #[test]
    fn zero_state_is_uniform() {
        let s = Scvb0State::<f64>::zeros(4, 5, sched(), 100);
        let h = Hyperparams::with_priors(4, 1.0, 0.1);
        let r = scvb0_responsibility(&s, &h, Biterm::new(1, 2));
        assert!(r.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    }

    #[test]
    fn hand_evaluated_responsibility() {
        // N_k = [10, 5], N_{w1|k} = [2, 1], N_{w2|k} = [3, 0.5], W = 4
        let n_wk = vec![vec![2.0, 3.0, 0.0, 0.0], vec![1.0, 0.5, 0.0, 0.0]];
        let s = Scvb0State::from_counts(vec![10.0, 5.0], &n_wk, sched(), 100).unwrap();
        let h = Hyperparams::with_priors(2, 1.0, 0.1);
        let r: Vec<f64> = scvb0_responsibility(&s, &h, Biterm::new(0, 1));
        let t0 = 11.0 * 2.1 * 3.1 / (20.4 * 21.4);
        let t1 = 6.0 * 1.1 * 0.6 / (10.4 * 11.4);
        assert!((r[0] - t0 / (t0 + t1)).abs() < 1e-15);
        assert!((r[1] - t1 / (t0 + t1)).abs() < 1e-15);
    }

    #[test]
    fn forced_full_step_jumps_to_crude_estimate() {
        let mut rng = StdRng::seed_from_u64(1);
        let mut s = Scvb0State::<f64>::random_init(3, 5, StepSchedule::Constant(1.0), 50, &mut rng);
        let h = Hyperparams::with_priors(3, 1.0, 0.1);
        let b = Biterm::new(1, 3);
        let resp = scvb0_responsibility(&s, &h, b);
        scvb0_step(&mut s, &h, b).unwrap();
        for k in 0..3 {
            assert!((s.n_k()[k] - 50.0 * resp[k]).abs() < 1e-12);
            for w in 0..5 {
                let expect = if w == 1 || w == 3 { 50.0 * resp[k] } else { 0.0 };
                assert!((s.n_wk(w, k) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_pair_gets_double_mass() {
        let mut s = Scvb0State::<f64>::zeros(2, 3, StepSchedule::Constant(1.0), 10);
        let h = Hyperparams::with_priors(2, 1.0, 0.1);
        scvb0_step(&mut s, &h, Biterm::new(2, 2)).unwrap();
        assert!((s.n_wk(2, 0) - 10.0).abs() < 1e-12);
        assert!((s.n_wk(2, 1) - 10.0).abs() < 1e-12);
        assert!(s.coupling_drift() < 1e-15);
    }

    #[test]
    fn partial_step_blends() {
        let mut s = Scvb0State::<f64>::from_counts(vec![4.0, 2.0], &[vec![1.0, 7.0], vec![3.0, 1.0]], StepSchedule::Constant(0.25), 8).unwrap();
        let h = Hyperparams::with_priors(2, 0.5, 0.1);
        let b = Biterm::new(0, 0);
        let resp = scvb0_responsibility(&s, &h, b);
        scvb0_step(&mut s, &h, b).unwrap();
        for k in 0..2 {
            let prev_nk = [4.0, 2.0][k];
            assert!((s.n_k()[k] - (0.75 * prev_nk + 0.25 * 8.0 * resp[k])).abs() < 1e-12);
        }
        assert!((s.n_wk(1, 0) - 0.75 * 7.0).abs() < 1e-12);
        assert!((s.n_wk(0, 1) - (0.75 * 3.0 + 0.25 * 16.0 * resp[1])).abs() < 1e-12);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn renormalize_examples() {
        let mut s = Scvb0State::<f64>::zeros(1, 2, sched(), 1);
        s.set_raw(1e-101, vec![1e90, 2e90]).unwrap();
        let before = s.n_wk(0, 0);
        s.renormalize_scale();
        assert_eq!(s.scale(), 1.0);
        assert!((s.dummy()[0] - 1e-11).abs() < 1e-11 * 1e-12);
        assert!((s.n_wk(0, 0) - before).abs() <= before * 1e-12);

        s.set_raw(0.5, vec![3.0, 4.0]).unwrap();
        s.renormalize_scale();
        assert_eq!(s.scale(), 0.5);
        assert_eq!(s.dummy(), &[3.0, 4.0]);
    }

    #[test]
    fn dense_and_scaled_updates_agree() {
        let h = Hyperparams::with_priors(4, 1.0, 0.05);
        let mut rng = StdRng::seed_from_u64(11);
        let init = Scvb0State::<f64>::random_init(4, 30, sched(), 5000, &mut rng);
        let mut fast = init.clone();
        let mut slow = init;
        slow.dense = true;
        for _ in 0..20_000 {
            let b = Biterm::new(rng.random_range(0..30), rng.random_range(0..30));
            scvb0_step(&mut fast, &h, b).unwrap();
            scvb0_step(&mut slow, &h, b).unwrap();
        }
        for w in 0..30 {
            for k in 0..4 {
                let (a, d) = (fast.n_wk(w, k), slow.n_wk(w, k));
                assert!((a - d).abs() <= 1e-9 * d.abs().max(1e-300), "{a} vs {d}");
            }
        }
    }

    #[test]
    fn restore_examples() {
        let s = Scvb0State::<f64>::zeros(2, 3, sched(), 10);
        let h = Hyperparams::with_priors(2, 1.0, 0.1);
        let p = scvb0_restore(&s, &h);
        assert_eq!(p.theta(), &[0.5, 0.5]);
        let s = Scvb0State::<f64>::from_counts(vec![3.0, 1.0], &[vec![0.0; 3], vec![0.0; 3]], sched(), 10).unwrap();
        let p = scvb0_restore(&s, &h);
        assert!((p.theta()[0] - 4.0 / 6.0).abs() < 1e-15);
        assert!((p.theta()[1] - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn responsibilities_normalized_f32() {
        let mut rng = StdRng::seed_from_u64(2);
        let s = Scvb0State::<f32>::random_init(5, 10, sched(), 1000, &mut rng);
        let h = Hyperparams::with_priors(5, 1.0, 0.1);
        let r = scvb0_responsibility(&s, &h, Biterm::new(3, 9));
        assert!((r.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
}
