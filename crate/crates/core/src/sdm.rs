//! Stochastic divergence minimization for BTM.
//!
//! The variational factor of a biterm is parameterized as
//!
//! ```text
//! q(z_i = k) ∝ a_k b_{k,w1} b_{k,w2} / (c_k (c_k + 1))
//! ```
//!
//! where `b_{k,w}` plays `E[n_{w|k}] + beta`, `c_k = sum_w b_{k,w}` plays
//! `E[n_{.|k}] + W beta` and `a_k = (c_k - W beta) / 2 + gamma` plays
//! `E[n_k] + gamma` (each biterm adds two word-topic counts). Only `b` is
//! learned: every time a word `w` is seen its column moves toward
//! `(n_w - 1) q(z | b') + beta` with a per-word Robbins–Monro step
//! `(1 + t(w))^-kappa`, and `c` is patched with the column's change. The
//! stream is consumed once.

use rand::Rng;

use crate::corpus::Biterm;
use crate::error::{BtmError, Result};
use crate::model::{Hyperparams, ModelParams};
use crate::scalar::Scalar;
use crate::schedule::StepSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct SdmState<F> {
    topics: usize,
    vocab_size: usize,
    /// `b_{k,w}`, word-major.
    b: Vec<F>,
    c: Vec<F>,
    t_w: Vec<u64>,
    schedule: StepSchedule,
    updates: u64,
    /// Recompute `c` from scratch every this many word updates.
    pub recompute_every: Option<u64>,
}

/// Default period of the full `c` recomputation.
pub const DEFAULT_RECOMPUTE_EVERY: u64 = 1 << 22;

impl<F: Scalar> SdmState<F> {
    /// Every `b_{k,w} = beta`.
    pub fn prior(topics: usize, vocab_size: usize, beta: f64, kappa: f64) -> Result<Self> {
        let schedule = StepSchedule::sdm(kappa)?;
        let beta = F::of(beta);
        Ok(SdmState {
            topics,
            vocab_size,
            b: vec![beta; topics * vocab_size],
            c: vec![F::of_count(vocab_size as u64) * beta; topics],
            t_w: vec![0; vocab_size],
            schedule,
            updates: 0,
            recompute_every: Some(DEFAULT_RECOMPUTE_EVERY),
        })
    }

    /// `b_{k,w} = beta + U(0, 0.01 beta)`.
    pub fn random_init<R: Rng + ?Sized>(topics: usize, vocab_size: usize, beta: f64, kappa: f64, rng: &mut R) -> Result<Self> {
        let mut s = Self::prior(topics, vocab_size, beta, kappa)?;
        for v in s.b.iter_mut() {
            *v = F::of(beta + 0.01 * beta * rng.random::<f64>());
        }
        s.recompute_c();
        Ok(s)
    }

    /// `b_{k,w} = n_wk[k][w] + beta`, `c` from the row sums.
    pub fn from_expected_counts(n_wk: &[Vec<F>], beta: f64, kappa: f64) -> Result<Self> {
        let topics = n_wk.len();
        let vocab_size = n_wk.first().map_or(0, Vec::len);
        let mut s = Self::prior(topics, vocab_size, beta, kappa)?;
        for (k, row) in n_wk.iter().enumerate() {
            if row.len() != vocab_size {
                return Err(BtmError::DimensionMismatch("ragged n_wk".into()));
            }
            for (w, &v) in row.iter().enumerate() {
                s.b[w * topics + k] = v + F::of(beta);
            }
        }
        s.recompute_c();
        Ok(s)
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    #[inline]
    pub fn b(&self, k: usize, w: usize) -> F {
        self.b[w * self.topics + k]
    }

    pub fn c(&self) -> &[F] {
        &self.c
    }

    pub fn t_w(&self) -> &[u64] {
        &self.t_w
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn row_sums(&self) -> Vec<F> {
        let mut sums = vec![F::zero(); self.topics];
        for col in self.b.chunks_exact(self.topics) {
            for (s, &v) in sums.iter_mut().zip(col) {
                *s += v;
            }
        }
        sums
    }

    pub fn recompute_c(&mut self) {
        self.c = self.row_sums();
    }

    /// Largest relative gap between the maintained `c_k` and a fresh row sum.
    pub fn c_drift(&self) -> F {
        self.row_sums()
            .iter()
            .zip(&self.c)
            .map(|(&exact, &kept)| (kept - exact).abs() / exact)
            .fold(F::zero(), F::max)
    }

    /// `a_k = (c_k - W beta) / 2 + gamma`.
    #[inline]
    pub fn a(&self, k: usize, hyper: &Hyperparams) -> F {
        let w_beta = F::of_count(self.vocab_size as u64) * F::of(hyper.beta);
        (self.c[k] - w_beta) / F::of(2.0) + F::of(hyper.gamma)
    }

    pub fn heap_bytes(&self) -> usize {
        std::mem::size_of::<F>() * (self.b.capacity() + self.c.capacity()) + 8 * self.t_w.capacity()
    }
}

pub fn sdm_responsibility_into<F: Scalar>(state: &SdmState<F>, hyper: &Hyperparams, b: Biterm, out: &mut [F]) {
    let kk = state.topics;
    let two = F::of(2.0);
    let gamma = F::of(hyper.gamma);
    let w_beta = F::of_count(state.vocab_size as u64) * F::of(hyper.beta);
    let r1 = &state.b[b.w1() * kk..(b.w1() + 1) * kk];
    let r2 = &state.b[b.w2() * kk..(b.w2() + 1) * kk];
    for k in 0..kk {
        let c = state.c[k];
        let a = (c - w_beta) / two + gamma;
        out[k] = a * r1[k] * r2[k] / (c * (c + F::one()));
    }
    crate::scalar::normalize_in_place(out);
}

/// Normalized `q(z = k | b) ∝ a_k b_{k,w1} b_{k,w2} / (c_k (c_k + 1))`.
pub fn sdm_responsibility<F: Scalar>(state: &SdmState<F>, hyper: &Hyperparams, b: Biterm) -> Vec<F> {
    let mut out = vec![F::zero(); state.topics];
    sdm_responsibility_into(state, hyper, b, &mut out);
    out
}

/// Moves the column of `w` toward `(n_w - 1) resp + beta` with step
/// `(1 + t(w))^-kappa`, patches `c` and increments `t(w)`.
pub fn sdm_update_word<F: Scalar>(state: &mut SdmState<F>, hyper: &Hyperparams, w: usize, resp: &[F], n_w: u64) {
    let kk = state.topics;
    let rho: F = state.schedule.rho(state.t_w[w]);
    let others = F::of_count(n_w.saturating_sub(1));
    let beta = F::of(hyper.beta);
    let col = &mut state.b[w * kk..(w + 1) * kk];
    for k in 0..kk {
        let old = col[k];
        let new = old + rho * (others * resp[k] + beta - old);
        col[k] = new;
        state.c[k] += new - old;
    }
    state.t_w[w] += 1;
    state.updates += 1;
    if let Some(every) = state.recompute_every {
        if state.updates % every == 0 {
            state.recompute_c();
        }
    }
}

/// One biterm: a single responsibility, then one column update per
/// distinct word (a self-pair updates its word once).
pub fn sdm_process_biterm<F: Scalar>(state: &mut SdmState<F>, hyper: &Hyperparams, b: Biterm, word_counts: &[u64]) -> Result<()> {
    b.check(state.vocab_size)?;
    b.check(word_counts.len())?;
    let resp = sdm_responsibility(state, hyper, b);
    sdm_update_word(state, hyper, b.w1(), &resp, word_counts[b.w1()]);
    if !b.is_self_pair() {
        sdm_update_word(state, hyper, b.w2(), &resp, word_counts[b.w2()]);
    }
    Ok(())
}

/// `phi_{k,w} = b_{k,w} / sum_w b_{k,w}`, `theta_k ∝ (c_k - W beta)/2 + gamma`
/// with `c` taken from fresh row sums.
pub fn sdm_restore<F: Scalar>(state: &SdmState<F>, hyper: &Hyperparams) -> ModelParams<F> {
    let w_beta = F::of_count(state.vocab_size as u64) * F::of(hyper.beta);
    let c = state.row_sums();
    let n_k: Vec<F> = c.iter().map(|&ck| ((ck - w_beta) / F::of(2.0)).max(F::zero())).collect();
    ModelParams::from_masses(&n_k, state.vocab_size, |k, w| state.b(k, w), F::of(hyper.gamma), F::zero())
}

/// Source of `n_w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WordCountSource {
    /// Counts from a pre-pass over the whole training stream.
    #[default]
    Prepass,
    /// Running tally of the biterms seen so far, current one included.
    Streaming,
}

/// Bounded per-word reservoir of past biterms, used to draw the "other"
/// biterm `i'` containing a word instead of reusing the current one.
#[derive(Debug, Clone)]
struct Reservoir {
    capacity: usize,
    slots: Vec<Vec<Biterm>>,
    seen: Vec<u64>,
}

impl Reservoir {
    fn new(vocab_size: usize, capacity: usize) -> Self {
        Reservoir { capacity, slots: vec![Vec::new(); vocab_size], seen: vec![0; vocab_size] }
    }

    fn offer<R: Rng + ?Sized>(&mut self, w: usize, b: Biterm, rng: &mut R) {
        self.seen[w] += 1;
        let slot = &mut self.slots[w];
        if slot.len() < self.capacity {
            slot.push(b);
        } else {
            let j = rng.random_range(0..self.seen[w]);
            if (j as usize) < self.capacity {
                slot[j as usize] = b;
            }
        }
    }

    fn draw<R: Rng + ?Sized>(&self, w: usize, rng: &mut R) -> Option<Biterm> {
        let slot = &self.slots[w];
        if slot.is_empty() {
            None
        } else {
            Some(slot[rng.random_range(0..slot.len())])
        }
    }

    fn heap_bytes(&self) -> usize {
        self.slots.iter().map(|s| s.capacity() * std::mem::size_of::<Biterm>()).sum::<usize>()
            + self.slots.capacity() * std::mem::size_of::<Vec<Biterm>>()
            + 8 * self.seen.capacity()
    }
}

/// One-pass SDM trainer.
#[derive(Debug, Clone)]
pub struct SdmBtm<F> {
    hyper: Hyperparams,
    state: SdmState<F>,
    word_counts: Vec<u64>,
    source: WordCountSource,
    reservoir: Option<Reservoir>,
    resp: Vec<F>,
    other: Vec<F>,
}

impl<F: Scalar> SdmBtm<F> {
    /// `word_counts` are the pre-pass `n_w`; with
    /// [`WordCountSource::Streaming`] they are ignored and tallied on the fly.
    pub fn new<R: Rng + ?Sized>(
        hyper: Hyperparams,
        vocab_size: usize,
        word_counts: Option<Vec<u64>>,
        source: WordCountSource,
        rng: &mut R,
    ) -> Result<Self> {
        hyper.validate()?;
        let word_counts = match source {
            WordCountSource::Streaming => vec![0; vocab_size],
            WordCountSource::Prepass => {
                let wc = word_counts.ok_or_else(|| {
                    BtmError::InvalidHyperparameter("pre-pass word counts required".into())
                })?;
                if wc.len() != vocab_size {
                    return Err(BtmError::DimensionMismatch(format!(
                        "{} word counts for vocabulary of {vocab_size}",
                        wc.len()
                    )));
                }
                wc
            }
        };
        let state = SdmState::random_init(hyper.topics, vocab_size, hyper.beta, hyper.kappa_sdm, rng)?;
        let k = hyper.topics;
        Ok(SdmBtm { hyper, state, word_counts, source, reservoir: None, resp: vec![F::zero(); k], other: vec![F::zero(); k] })
    }

    /// Draw the sample biterm `i'` from a per-word reservoir of `capacity`
    /// past biterms.
    pub fn with_resample_other(mut self, capacity: usize) -> Self {
        self.reservoir = Some(Reservoir::new(self.state.vocab_size, capacity.max(1)));
        self
    }

    pub fn process<R: Rng + ?Sized>(&mut self, b: Biterm, rng: &mut R) -> Result<()> {
        b.check(self.state.vocab_size)?;
        if self.source == WordCountSource::Streaming {
            self.word_counts[b.w1()] += 1;
            if !b.is_self_pair() {
                self.word_counts[b.w2()] += 1;
            }
        }
        sdm_responsibility_into(&self.state, &self.hyper, b, &mut self.resp);
        let words: &[usize] = if b.is_self_pair() { &[b.w1()] } else { &[b.w1(), b.w2()] };
        for &w in words {
            let n_w = self.word_counts[w];
            match self.reservoir.as_ref().and_then(|r| r.draw(w, rng)) {
                Some(prev) => {
                    sdm_responsibility_into(&self.state, &self.hyper, prev, &mut self.other);
                    sdm_update_word(&mut self.state, &self.hyper, w, &self.other, n_w);
                }
                None => sdm_update_word(&mut self.state, &self.hyper, w, &self.resp, n_w),
            }
            if let Some(r) = self.reservoir.as_mut() {
                r.offer(w, b, rng);
            }
        }
        Ok(())
    }

    pub fn state(&self) -> &SdmState<F> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SdmState<F> {
        &mut self.state
    }

    pub fn word_counts(&self) -> &[u64] {
        &self.word_counts
    }

    pub fn params(&self) -> ModelParams<F> {
        sdm_restore(&self.state, &self.hyper)
    }

    pub fn heap_bytes(&self) -> usize {
        self.state.heap_bytes()
            + 8 * self.word_counts.capacity()
            + std::mem::size_of::<F>() * (self.resp.capacity() + self.other.capacity())
            + self.reservoir.as_ref().map_or(0, Reservoir::heap_bytes)
    }
}
