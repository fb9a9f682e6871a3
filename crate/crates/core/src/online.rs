//! Time-sliced online BTM.
//!
//! Each slice is sampled from a uniform start with vector-valued priors,
//! and the priors for the next slice absorb `lambda` times the slice's
//! final counts.

use rand::Rng;

use crate::corpus::Biterm;
use crate::error::{BtmError, Result};
use crate::model::{CountState, Hyperparams, ModelParams};
use crate::sampling::sample_categorical;
use crate::scalar::Scalar;

/// Per-topic priors `gamma_k` and per-topic-word priors `beta_{k,w}`
/// (stored word-major).
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineHyperState {
    topics: usize,
    vocab_size: usize,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    beta_row_sum: Vec<f64>,
}

/// Where the prior carry-over is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HyperUpdate {
    /// Once per slice, after the inner iterations, with the slice's counts.
    #[default]
    SliceEnd,
    /// After every draw: the drawn topic's `gamma` and the two word priors
    /// grow by `lambda`. Counts a biterm once per inner iteration.
    PerBiterm,
}

impl OnlineHyperState {
    pub fn symmetric(topics: usize, vocab_size: usize, gamma: f64, beta: f64) -> Self {
        OnlineHyperState {
            topics,
            vocab_size,
            gamma: vec![gamma; topics],
            beta: vec![beta; topics * vocab_size],
            beta_row_sum: vec![vocab_size as f64 * beta; topics],
        }
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    #[inline]
    pub fn beta(&self, k: usize, w: usize) -> f64 {
        self.beta[w * self.topics + k]
    }

    /// `sum_w beta_{k,w}`.
    pub fn beta_row_sum(&self, k: usize) -> f64 {
        self.beta_row_sum[k]
    }

    /// `gamma_k += lambda n_k`, `beta_{k,w} += lambda n_{w|k}`.
    pub fn update(&mut self, counts: &CountState, lambda: f64) {
        if lambda == 0.0 {
            return;
        }
        for k in 0..self.topics {
            self.gamma[k] += lambda * counts.n_k(k) as f64;
            self.beta_row_sum[k] += lambda * counts.n_dot_k(k) as f64;
        }
        for w in 0..self.vocab_size {
            let row = counts.word_row(w);
            for k in 0..self.topics {
                self.beta[w * self.topics + k] += lambda * row[k] as f64;
            }
        }
    }

    fn bump(&mut self, b: Biterm, k: usize, lambda: f64) {
        self.gamma[k] += lambda;
        self.beta[b.w1() * self.topics + k] += lambda;
        self.beta[b.w2() * self.topics + k] += lambda;
        self.beta_row_sum[k] += 2.0 * lambda;
    }

    /// `theta_k ∝ n_k + gamma_k`, `phi_{k,w} ∝ n_{w|k} + beta_{k,w}`.
    pub fn restore<F: Scalar>(&self, counts: &CountState) -> ModelParams<F> {
        let mut theta: Vec<F> = (0..self.topics).map(|k| F::of(counts.n_k(k) as f64 + self.gamma[k])).collect();
        crate::scalar::normalize_in_place(&mut theta);
        let phi = (0..self.topics)
            .map(|k| {
                let mut row: Vec<F> =
                    (0..self.vocab_size).map(|w| F::of(counts.n_wk(w, k) as f64 + self.beta(k, w))).collect();
                crate::scalar::normalize_in_place(&mut row);
                row
            })
            .collect();
        ModelParams::new(theta, phi).expect("consistent dimensions")
    }

    pub fn heap_bytes(&self) -> usize {
        8 * (self.gamma.capacity() + self.beta.capacity() + self.beta_row_sum.capacity())
    }
}

/// Normalized slice conditional with vector priors; `slice_counts` must
/// exclude `b`.
pub fn online_conditional_into<F: Scalar>(slice_counts: &CountState, hs: &OnlineHyperState, b: Biterm, out: &mut [F]) {
    let r1 = slice_counts.word_row(b.w1());
    let r2 = slice_counts.word_row(b.w2());
    for k in 0..hs.topics {
        let dot = slice_counts.n_dot_k(k) as f64 + hs.beta_row_sum[k];
        let v = (slice_counts.n_k(k) as f64 + hs.gamma[k])
            * (r1[k] as f64 + hs.beta(k, b.w1()))
            * (r2[k] as f64 + hs.beta(k, b.w2()))
            / (dot * (dot + 1.0));
        out[k] = F::of(v);
    }
    crate::scalar::normalize_in_place(out);
}

pub fn online_conditional<F: Scalar>(slice_counts: &CountState, hs: &OnlineHyperState, b: Biterm) -> Vec<F> {
    let mut out = vec![F::zero(); hs.topics];
    online_conditional_into(slice_counts, hs, b, &mut out);
    out
}

/// Applies the end-of-slice carry-over to a copy of `hs`.
pub fn update_hyperparams(hs: &OnlineHyperState, slice_counts: &CountState, lambda: f64) -> OnlineHyperState {
    let mut next = hs.clone();
    next.update(slice_counts, lambda);
    next
}

/// Samples one slice and returns its restored parameters together with the
/// slice's final counts. `hs` is advanced in place.
pub fn process_slice<F: Scalar, R: Rng + ?Sized>(
    hs: &mut OnlineHyperState,
    slice: &[Biterm],
    inner_iters: usize,
    lambda: f64,
    mode: HyperUpdate,
    rng: &mut R,
) -> Result<(ModelParams<F>, CountState)> {
    if inner_iters == 0 {
        return Err(BtmError::InvalidHyperparameter("inner iterations must be >= 1".into()));
    }
    for b in slice {
        b.check(hs.vocab_size)?;
    }
    let mut counts = CountState::init_uniform(hs.topics, hs.vocab_size, slice, rng);
    if slice.is_empty() {
        return Ok((hs.restore(&counts), counts));
    }
    let mut buf = vec![0.0f64; hs.topics];
    for _ in 0..inner_iters {
        for (i, &b) in slice.iter().enumerate() {
            counts.remove(b, counts.z[i])?;
            online_conditional_into(&counts, hs, b, &mut buf);
            let k = sample_categorical(&buf, rng);
            counts.add(b, k);
            counts.z[i] = k;
            if mode == HyperUpdate::PerBiterm {
                hs.bump(b, k, lambda);
            }
        }
    }
    let params = hs.restore(&counts);
    if mode == HyperUpdate::SliceEnd {
        hs.update(&counts, lambda);
    }
    Ok((params, counts))
}

/// Streaming driver: buffers arrivals into fixed-size slices.
#[derive(Debug, Clone)]
pub struct OnlineBtm<F> {
    hyper: Hyperparams,
    state: OnlineHyperState,
    slice_size: usize,
    inner_iters: usize,
    mode: HyperUpdate,
    pending: Vec<Biterm>,
    params: ModelParams<F>,
    slices: usize,
    slice_bytes: usize,
}

impl<F: Scalar> OnlineBtm<F> {
    pub fn new(hyper: Hyperparams, vocab_size: usize, slice_size: usize, inner_iters: usize, mode: HyperUpdate) -> Result<Self> {
        hyper.validate()?;
        if slice_size == 0 || inner_iters == 0 {
            return Err(BtmError::InvalidHyperparameter("slice size and inner iterations must be >= 1".into()));
        }
        let state = OnlineHyperState::symmetric(hyper.topics, vocab_size, hyper.gamma, hyper.beta);
        let params = state.restore(&CountState::new(hyper.topics, vocab_size));
        Ok(OnlineBtm {
            hyper,
            state,
            slice_size,
            inner_iters,
            mode,
            pending: Vec::with_capacity(slice_size),
            params,
            slices: 0,
            slice_bytes: 0,
        })
    }

    pub fn push<R: Rng + ?Sized>(&mut self, b: Biterm, rng: &mut R) -> Result<()> {
        b.check(self.state.vocab_size)?;
        self.pending.push(b);
        if self.pending.len() == self.slice_size {
            self.run_pending(rng)?;
        }
        Ok(())
    }

    /// Processes a partially filled slice.
    pub fn flush<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if !self.pending.is_empty() {
            self.run_pending(rng)?;
        }
        Ok(())
    }

    fn run_pending<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let slice = std::mem::take(&mut self.pending);
        let (params, counts) =
            process_slice(&mut self.state, &slice, self.inner_iters, self.hyper.lambda, self.mode, rng)?;
        self.params = params;
        self.slices += 1;
        self.slice_bytes = self.slice_bytes.max(counts.heap_bytes());
        self.pending = slice;
        self.pending.clear();
        Ok(())
    }

    /// Parameters of the most recent completed slice.
    pub fn params(&self) -> &ModelParams<F> {
        &self.params
    }

    pub fn hyper_state(&self) -> &OnlineHyperState {
        &self.state
    }

    pub fn slices_processed(&self) -> usize {
        self.slices
    }

    pub fn heap_bytes(&self) -> usize {
        self.state.heap_bytes() + self.slice_bytes + std::mem::size_of::<Biterm>() * self.pending.capacity()
    }
}
