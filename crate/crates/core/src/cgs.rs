//! Batch collapsed Gibbs sampling.

use rand::Rng;

use crate::corpus::Biterm;
use crate::error::{BtmError, Result};
use crate::model::{restore_params, CountState, Hyperparams, ModelParams};
use crate::sampling::sample_categorical;
use crate::scalar::Scalar;

/// Writes the normalized collapsed conditional of `b` into `out`.
///
/// `counts` must already exclude `b`. A self-pair uses `n_{w|k} + beta`
/// for both slots.
pub fn gibbs_conditional_into<F: Scalar>(counts: &CountState, hyper: &Hyperparams, b: Biterm, out: &mut [F]) {
    let kk = counts.topics();
    debug_assert_eq!(out.len(), kk);
    let gamma = F::of(hyper.gamma);
    let beta = F::of(hyper.beta);
    let w_beta = F::of_count(counts.vocab_size() as u64) * beta;
    let r1 = counts.word_row(b.w1());
    let r2 = counts.word_row(b.w2());
    for k in 0..kk {
        let dot = F::of_count(counts.n_dot_k(k)) + w_beta;
        out[k] = (F::of_count(counts.n_k(k)) + gamma) * (F::of_count(r1[k]) + beta) * (F::of_count(r2[k]) + beta)
            / (dot * (dot + F::one()));
    }
    crate::scalar::normalize_in_place(out);
}

pub fn gibbs_conditional<F: Scalar>(counts: &CountState, hyper: &Hyperparams, b: Biterm) -> Vec<F> {
    let mut out = vec![F::zero(); counts.topics()];
    gibbs_conditional_into(counts, hyper, b, &mut out);
    out
}

/// Removes `b` from topic `current`, draws a new topic from the
/// conditional and adds it back. Returns the new topic.
#[inline]
pub(crate) fn resample<R: Rng + ?Sized>(
    counts: &mut CountState,
    hyper: &Hyperparams,
    b: Biterm,
    current: usize,
    buf: &mut [f64],
    rng: &mut R,
) -> Result<usize> {
    counts.remove(b, current)?;
    gibbs_conditional_into(counts, hyper, b, buf);
    let k = sample_categorical(buf, rng);
    counts.add(b, k);
    Ok(k)
}

/// One pass over `biterms` in corpus order. `state.z[i]` is the current
/// topic of `biterms[i]`.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut CountState,
    biterms: &[Biterm],
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<()> {
    if state.z.len() != biterms.len() {
        return Err(BtmError::DimensionMismatch(format!(
            "{} assignments for {} biterms",
            state.z.len(),
            biterms.len()
        )));
    }
    let mut buf = vec![0.0f64; state.topics()];
    for (i, &b) in biterms.iter().enumerate() {
        let cur = state.z[i];
        state.z[i] = resample(state, hyper, b, cur, &mut buf, rng)?;
    }
    Ok(())
}

/// Batch sampler over a fixed training set.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    hyper: Hyperparams,
    biterms: Vec<Biterm>,
    state: CountState,
}

impl GibbsSampler {
    /// Uniform initial assignments.
    pub fn new<R: Rng + ?Sized>(hyper: Hyperparams, vocab_size: usize, biterms: Vec<Biterm>, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        for b in &biterms {
            b.check(vocab_size)?;
        }
        let state = CountState::init_uniform(hyper.topics, vocab_size, &biterms, rng);
        Ok(GibbsSampler { hyper, biterms, state })
    }

    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        gibbs_sweep(&mut self.state, &self.biterms, &self.hyper, rng)
    }

    pub fn run<R: Rng + ?Sized>(&mut self, sweeps: usize, rng: &mut R) -> Result<()> {
        for _ in 0..sweeps {
            self.sweep(rng)?;
        }
        Ok(())
    }

    pub fn state(&self) -> &CountState {
        &self.state
    }

    pub fn assignments(&self) -> &[usize] {
        &self.state.z
    }

    pub fn params<F: Scalar>(&self) -> ModelParams<F> {
        restore_params(&self.state, &self.hyper)
    }
}

/// Exact posterior over all `K^{N_B}` joint assignments of a tiny corpus.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    topics: usize,
    n_biterms: usize,
    probs: Vec<f64>,
    biterms: Vec<Biterm>,
    vocab_size: usize,
    hyper: Hyperparams,
}

/// Largest state space the oracle will enumerate.
pub const ORACLE_STATE_LIMIT: u128 = 8192;

/// `ln prod_{j < n} (x + j)`, i.e. `ln Gamma(x + n) - ln Gamma(x)`.
fn ln_rising(x: f64, n: u64) -> f64 {
    (0..n).map(|j| (x + j as f64).ln()).sum()
}

/// Collapsed joint `ln p(z, B)` up to a constant: Dirichlet-multinomial
/// terms for the topic counts and for each topic's word counts.
fn collapsed_log_joint(counts: &CountState, hyper: &Hyperparams) -> f64 {
    let w_beta = counts.vocab_size() as f64 * hyper.beta;
    let mut lp = 0.0;
    for k in 0..counts.topics() {
        lp += ln_rising(hyper.gamma, counts.n_k(k));
        lp -= ln_rising(w_beta, counts.n_dot_k(k));
        for w in 0..counts.vocab_size() {
            lp += ln_rising(hyper.beta, counts.n_wk(w, k));
        }
    }
    lp
}

fn decode(mut index: usize, topics: usize, n: usize, out: &mut [usize]) {
    for slot in out.iter_mut().take(n) {
        *slot = index % topics;
        index /= topics;
    }
}

/// Enumerates and normalizes the collapsed joint over every assignment.
pub fn exact_posterior_oracle(biterms: &[Biterm], vocab_size: usize, hyper: &Hyperparams) -> Result<ExactPosterior> {
    hyper.validate()?;
    for b in biterms {
        b.check(vocab_size)?;
    }
    let topics = hyper.topics;
    let n = biterms.len();
    let states = (topics as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if states > ORACLE_STATE_LIMIT {
        return Err(BtmError::InstanceTooLarge { states, limit: ORACLE_STATE_LIMIT });
    }
    let mut z = vec![0usize; n];
    let mut logs = Vec::with_capacity(states as usize);
    for idx in 0..states as usize {
        decode(idx, topics, n, &mut z);
        let mut c = CountState::new(topics, vocab_size);
        for (b, &k) in biterms.iter().zip(&z) {
            c.add(*b, k);
        }
        logs.push(collapsed_log_joint(&c, hyper));
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    Ok(ExactPosterior { topics, n_biterms: n, probs, biterms: biterms.to_vec(), vocab_size, hyper: hyper.clone() })
}

impl ExactPosterior {
    /// Index of an assignment in `probabilities()`: `z[0]` is the least
    /// significant base-`K` digit.
    pub fn index_of(&self, z: &[usize]) -> usize {
        z.iter().rev().fold(0, |acc, &k| acc * self.topics + k)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn assignment(&self, index: usize) -> Vec<usize> {
        let mut z = vec![0; self.n_biterms];
        decode(index, self.topics, self.n_biterms, &mut z);
        z
    }

    /// Posterior marginal of `z_i`.
    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.topics];
        let mut z = vec![0usize; self.n_biterms];
        for (idx, &p) in self.probs.iter().enumerate() {
            decode(idx, self.topics, self.n_biterms, &mut z);
            m[z[i]] += p;
        }
        m
    }

    /// `p(z_i | z_{-i})` obtained from the joint table by marginalizing.
    pub fn conditional(&self, i: usize, z: &[usize]) -> Vec<f64> {
        let mut zz = z.to_vec();
        let mut out: Vec<f64> = (0..self.topics)
            .map(|k| {
                zz[i] = k;
                self.probs[self.index_of(&zz)]
            })
            .collect();
        let s: f64 = out.iter().sum();
        out.iter_mut().for_each(|p| *p /= s);
        out
    }

    /// Closed-form Gibbs conditional evaluated on the counts of `z` without `i`,
    /// for comparison with [`ExactPosterior::conditional`].
    pub fn formula_conditional(&self, i: usize, z: &[usize]) -> Vec<f64> {
        let mut c = CountState::new(self.topics, self.vocab_size);
        for (j, (b, &k)) in self.biterms.iter().zip(z).enumerate() {
            if j != i {
                c.add(*b, k);
            }
        }
        gibbs_conditional(&c, &self.hyper, self.biterms[i])
    }
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn empty_counts_give_uniform() {
        let c = CountState::new(4, 5);
        let h = Hyperparams::with_priors(4, 0.3, 0.2);
        let p: Vec<f64> = gibbs_conditional(&c, &h, Biterm::new(1, 3));
        for x in p {
            assert!((x - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_evaluated_conditional() {
        // n_k = [2, 1]; word 0 counts [1, 0]; word 1 counts [1, 1];
        // n_{.|k} = [4, 2] (word 2 fills the rest)
        let mut c = CountState::new(2, 3);
        c.add(Biterm::new(0, 2), 0);
        c.add(Biterm::new(1, 2), 0);
        c.add(Biterm::new(1, 2), 1);
        assert_eq!(c.word_row(0), &[1, 0]);
        assert_eq!(c.word_row(1), &[1, 1]);
        assert_eq!((c.n_dot_k(0), c.n_dot_k(1)), (4, 2));
        let h = Hyperparams::with_priors(2, 0.5, 0.1);
        let p: Vec<f64> = gibbs_conditional(&c, &h, Biterm::new(0, 1));
        let a = 2.5 * 1.1 * 1.1 / (4.3 * 5.3);
        let b = 1.5 * 0.1 * 1.1 / (2.3 * 3.3);
        assert!((p[0] - a / (a + b)).abs() < 1e-14);
        assert!((p[1] - b / (a + b)).abs() < 1e-14);
    }

    #[test]
    fn self_pair_uses_word_term_twice() {
        let mut c = CountState::new(2, 2);
        c.add(Biterm::new(0, 1), 0);
        let h = Hyperparams::with_priors(2, 1.0, 0.5);
        let p: Vec<f64> = gibbs_conditional(&c, &h, Biterm::new(0, 0));
        let a = 2.0 * 1.5 * 1.5 / (3.0 * 4.0);
        let b = 1.0 * 0.5 * 0.5 / (1.0 * 2.0);
        assert!((p[0] - a / (a + b)).abs() < 1e-14);
    }

    #[test]
    fn single_topic_single_biterm() {
        let mut rng = StdRng::seed_from_u64(0);
        let mut g = GibbsSampler::new(Hyperparams::with_priors(1, 1.0, 0.1), 3, vec![Biterm::new(0, 2)], &mut rng).unwrap();
        let before = g.state().clone();
        g.run(5, &mut rng).unwrap();
        assert_eq!(g.assignments(), &[0]);
        assert_eq!(g.state(), &before);
    }

    #[test]
    fn sweeps_conserve_counts() {
        let mut rng = StdRng::seed_from_u64(5);
        let biterms: Vec<Biterm> =
            (0..300).map(|_| Biterm::new(rng.random_range(0..20), rng.random_range(0..20))).collect();
        let mut g = GibbsSampler::new(Hyperparams::with_priors(4, 0.5, 0.1), 20, biterms, &mut rng).unwrap();
        for _ in 0..10 {
            g.sweep(&mut rng).unwrap();
            assert_eq!(g.state().total(), 300);
            g.state().check_invariants().unwrap();
        }
    }

    #[test]
    fn sweep_rejects_missing_assignments() {
        let mut s = CountState::new(2, 2);
        let mut rng = StdRng::seed_from_u64(0);
        let err = gibbs_sweep(&mut s, &[Biterm::new(0, 1)], &Hyperparams::with_priors(2, 1.0, 1.0), &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn oracle_single_biterm_is_uniform() {
        let post = exact_posterior_oracle(&[Biterm::new(0, 1)], 3, &Hyperparams::with_priors(3, 0.7, 0.2)).unwrap();
        for &p in post.probabilities() {
            assert!((p - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn oracle_label_symmetry() {
        let b = Biterm::new(0, 1);
        let post = exact_posterior_oracle(&[b, b], 2, &Hyperparams::with_priors(2, 0.5, 0.1)).unwrap();
        let p = post.probabilities();
        // states: (0,0), (1,0), (0,1), (1,1)
        assert!((p[0] - p[3]).abs() < 1e-15);
        assert!((p[1] - p[2]).abs() < 1e-15);
        assert!(p[0] > p[1]);
    }

    #[test]
    fn oracle_three_biterm_table() {
        let biterms = [Biterm::new(0, 1), Biterm::new(1, 2), Biterm::new(0, 2)];
        let h = Hyperparams::with_priors(2, 0.5, 0.1);
        let post = exact_posterior_oracle(&biterms, 3, &h).unwrap();
        assert_eq!(post.probabilities().len(), 8);
        assert!((post.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // all-same assignment versus one split, from the closed-form ratio
        // of Dirichlet-multinomial normalizers
        let all0 = post.probabilities()[post.index_of(&[0, 0, 0])];
        let split = post.probabilities()[post.index_of(&[0, 0, 1])];
        let w_beta = 0.3;
        let rise = |x: f64, n: u64| (0..n).map(|j| x + j as f64).product::<f64>();
        let joint = |topic_sizes: [u64; 2], word_counts: [[u64; 3]; 2]| {
            let mut v = 1.0;
            for k in 0..2 {
                v *= rise(0.5, topic_sizes[k]) / rise(w_beta, 2 * topic_sizes[k]);
                for w in 0..3 {
                    v *= rise(0.1, word_counts[k][w]);
                }
            }
            v
        };
        let expected = joint([3, 0], [[2, 2, 2], [0, 0, 0]]) / joint([2, 1], [[1, 2, 1], [1, 0, 1]]);
        assert!((all0 / split - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn oracle_rejects_large_instances() {
        let biterms = vec![Biterm::new(0, 1); 9];
        let err = exact_posterior_oracle(&biterms, 2, &Hyperparams::with_priors(3, 0.5, 0.1));
        assert!(matches!(err, Err(BtmError::InstanceTooLarge { .. })));
    }

    proptest! {
        #[test]
        fn conditional_is_normalized(
            adds in proptest::collection::vec((0usize..5, 0usize..5, 0usize..3), 0..40),
            w1 in 0usize..5, w2 in 0usize..5,
            gamma in 0.01f64..5.0, beta in 0.001f64..1.0,
        ) {
            let mut c = CountState::new(3, 5);
            for &(a, b, k) in &adds {
                c.add(Biterm::new(a, b), k);
            }
            let p: Vec<f64> = gibbs_conditional(&c, &Hyperparams::with_priors(3, gamma, beta), Biterm::new(w1, w2));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
        }
    }
}
