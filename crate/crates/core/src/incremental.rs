//! Incremental BTM: one Gibbs draw per arrival followed by a rejuvenation
//! sequence of uniformly chosen past biterms.

use rand::Rng;

use crate::cgs::{gibbs_conditional_into, resample};
use crate::corpus::Biterm;
use crate::error::Result;
use crate::model::{restore_params, CountState, Hyperparams, ModelParams};
use crate::sampling::sample_categorical;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct IncrementalBtm {
    hyper: Hyperparams,
    counts: CountState,
    /// Every biterm seen so far with its current topic.
    history: Vec<(Biterm, usize)>,
    buf: Vec<f64>,
}

impl IncrementalBtm {
    pub fn new(hyper: Hyperparams, vocab_size: usize) -> Result<Self> {
        hyper.validate()?;
        let counts = CountState::new(hyper.topics, vocab_size);
        let buf = vec![0.0; hyper.topics];
        Ok(IncrementalBtm { hyper, counts, history: Vec::new(), buf })
    }

    /// Samples `b` against the current global counts, records it, then
    /// resamples `rejuv_len` history entries drawn uniformly with
    /// replacement (the new arrival included).
    pub fn process<R: Rng + ?Sized>(&mut self, b: Biterm, rng: &mut R) -> Result<()> {
        b.check(self.counts.vocab_size())?;
        gibbs_conditional_into(&self.counts, &self.hyper, b, &mut self.buf);
        let k = sample_categorical(&self.buf, rng);
        self.counts.add(b, k);
        self.history.push((b, k));
        for _ in 0..self.hyper.rejuv_len {
            let j = rng.random_range(0..self.history.len());
            let (bj, kj) = self.history[j];
            self.history[j].1 = resample(&mut self.counts, &self.hyper, bj, kj, &mut self.buf, rng)?;
        }
        Ok(())
    }

    pub fn counts(&self) -> &CountState {
        &self.counts
    }

    pub fn history(&self) -> &[(Biterm, usize)] {
        &self.history
    }

    pub fn params<F: Scalar>(&self) -> ModelParams<F> {
        restore_params(&self.counts, &self.hyper)
    }

    pub fn heap_bytes(&self) -> usize {
        self.counts.heap_bytes()
            + std::mem::size_of::<(Biterm, usize)>() * self.history.capacity()
            + 8 * self.buf.capacity()
    }
}

/// Free-function form of [`IncrementalBtm::process`].
pub fn process_biterm_incremental<R: Rng + ?Sized>(state: &mut IncrementalBtm, b: Biterm, rng: &mut R) -> Result<()> {
    state.process(b, rng)
}
