//! Hyperparameters, count statistics, parameter restoration and held-out
//! likelihood shared by every backend.

use std::io::{BufRead, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::corpus::Biterm;
use crate::error::{BtmError, Result};
use crate::sampling::uniform_topic;
use crate::scalar::Scalar;

/// Run configuration shared by all backends.
///
/// `gamma` is the symmetric topic prior (written alpha in some CVB
/// derivations), `beta` the symmetric word prior.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub topics: usize,
    pub gamma: f64,
    pub beta: f64,
    /// Online BTM carry-over weight.
    pub lambda: f64,
    /// Incremental BTM rejuvenation length.
    pub rejuv_len: usize,
    pub tau: f64,
    pub kappa_scvb0: f64,
    pub kappa_sdm: f64,
    pub seed: u64,
}

impl Hyperparams {
    /// `gamma = 50 / K`, `beta = 0.01`, `tau = 1000`, `kappa = 0.8` for
    /// SCVB0 and `0.51` for SDM, `R = 10`.
    pub fn defaults_for(topics: usize) -> Self {
        Hyperparams {
            topics,
            gamma: 50.0 / topics.max(1) as f64,
            beta: 0.01,
            lambda: 1.0,
            rejuv_len: 10,
            tau: 1000.0,
            kappa_scvb0: 0.8,
            kappa_sdm: 0.51,
            seed: 0,
        }
    }

    pub fn with_priors(topics: usize, gamma: f64, beta: f64) -> Self {
        Hyperparams { gamma, beta, ..Hyperparams::defaults_for(topics) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BtmError::InvalidHyperparameter(m));
        if self.topics == 0 {
            return bad("topic count must be >= 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma = {} must be positive", self.gamma));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta = {} must be positive", self.beta));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda = {} must lie in [0, 1]", self.lambda));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau = {} must be >= 0", self.tau));
        }
        crate::schedule::check_kappa(self.kappa_scvb0)?;
        crate::schedule::check_kappa(self.kappa_sdm)?;
        Ok(())
    }
}

/// Integer sufficient statistics of a hard topic assignment.
///
/// Word-topic counts are stored word-major (`w * K + k`) so the `K` counts
/// of one word are contiguous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountState {
    topics: usize,
    vocab_size: usize,
    n_k: Vec<u64>,
    n_wk: Vec<u64>,
    n_dot_k: Vec<u64>,
    /// Current assignment of each tracked biterm.
    pub z: Vec<usize>,
}

impl CountState {
    pub fn new(topics: usize, vocab_size: usize) -> Self {
        CountState {
            topics,
            vocab_size,
            n_k: vec![0; topics],
            n_wk: vec![0; topics * vocab_size],
            n_dot_k: vec![0; topics],
            z: Vec::new(),
        }
    }

    /// Draws every assignment uniformly and tallies the counts.
    pub fn init_uniform<R: Rng + ?Sized>(topics: usize, vocab_size: usize, biterms: &[Biterm], rng: &mut R) -> Self {
        let mut s = CountState::new(topics, vocab_size);
        s.z.reserve(biterms.len());
        for b in biterms {
            let k = uniform_topic(topics, rng);
            s.add(*b, k);
            s.z.push(k);
        }
        s
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    #[inline]
    pub fn n_k(&self, k: usize) -> u64 {
        self.n_k[k]
    }

    #[inline]
    pub fn n_wk(&self, w: usize, k: usize) -> u64 {
        self.n_wk[w * self.topics + k]
    }

    /// The `K` counts of word `w`.
    #[inline]
    pub fn word_row(&self, w: usize) -> &[u64] {
        &self.n_wk[w * self.topics..(w + 1) * self.topics]
    }

    /// `n_{.|k}`, maintained incrementally.
    #[inline]
    pub fn n_dot_k(&self, k: usize) -> u64 {
        self.n_dot_k[k]
    }

    pub fn topic_counts(&self) -> &[u64] {
        &self.n_k
    }

    /// Number of biterms currently counted.
    pub fn total(&self) -> u64 {
        self.n_k.iter().sum()
    }

    #[inline]
    pub fn add(&mut self, b: Biterm, k: usize) {
        let kk = self.topics;
        self.n_k[k] += 1;
        self.n_wk[b.w1() * kk + k] += 1;
        self.n_wk[b.w2() * kk + k] += 1;
        self.n_dot_k[k] += 2;
        debug_assert_eq!(self.n_dot_k[k], 2 * self.n_k[k]);
    }

    #[inline]
    pub fn remove(&mut self, b: Biterm, k: usize) -> Result<()> {
        let kk = self.topics;
        let need = if b.is_self_pair() { 2 } else { 1 };
        if self.n_k[k] == 0 {
            return Err(BtmError::CountUnderflow { topic: k, word: None });
        }
        if self.n_wk[b.w1() * kk + k] < need {
            return Err(BtmError::CountUnderflow { topic: k, word: Some(b.w1()) });
        }
        if self.n_wk[b.w2() * kk + k] < need {
            return Err(BtmError::CountUnderflow { topic: k, word: Some(b.w2()) });
        }
        self.n_k[k] -= 1;
        self.n_wk[b.w1() * kk + k] -= 1;
        self.n_wk[b.w2() * kk + k] -= 1;
        self.n_dot_k[k] -= 2;
        debug_assert_eq!(self.n_dot_k[k], 2 * self.n_k[k]);
        Ok(())
    }

    /// Full recount check of `sum_w n_{w|k} = 2 n_k` and of the cached
    /// totals. O(KW).
    pub fn check_invariants(&self) -> Result<()> {
        for k in 0..self.topics {
            let s: u64 = (0..self.vocab_size).map(|w| self.n_wk(w, k)).sum();
            if s != 2 * self.n_k[k] || s != self.n_dot_k[k] {
                return Err(BtmError::DimensionMismatch(format!(
                    "topic {k}: sum_w n_wk = {s}, n_k = {}, cached n_.k = {}",
                    self.n_k[k], self.n_dot_k[k]
                )));
            }
        }
        if !self.z.is_empty() && self.z.len() as u64 != self.total() {
            return Err(BtmError::DimensionMismatch(format!(
                "{} assignments but {} counted biterms",
                self.z.len(),
                self.total()
            )));
        }
        Ok(())
    }

    /// Heap bytes held by the statistics and assignments.
    pub fn heap_bytes(&self) -> usize {
        8 * (self.n_k.capacity() + self.n_wk.capacity() + self.n_dot_k.capacity())
            + std::mem::size_of::<usize>() * self.z.capacity()
    }
}

/// Topic proportions `theta` (length `K`) and topic-word distributions
/// `phi` (`K` rows of length `W`).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    topics: usize,
    vocab_size: usize,
    theta: Vec<F>,
    phi: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn new(theta: Vec<F>, phi_rows: Vec<Vec<F>>) -> Result<Self> {
        let topics = theta.len();
        if topics == 0 || phi_rows.len() != topics {
            return Err(BtmError::DimensionMismatch(format!(
                "theta has {} entries, phi has {} rows",
                topics,
                phi_rows.len()
            )));
        }
        let vocab_size = phi_rows[0].len();
        if phi_rows.iter().any(|r| r.len() != vocab_size) {
            return Err(BtmError::DimensionMismatch("ragged phi rows".into()));
        }
        let phi = phi_rows.into_iter().flatten().collect();
        Ok(ModelParams { topics, vocab_size, theta, phi })
    }

    /// `theta_k ∝ topic_mass[k] + gamma`, `phi_{k,w} ∝ word_mass(k, w) + beta`.
    ///
    /// Integer counts and real-valued expected counts go through the same
    /// normalization.
    pub fn from_masses(
        topic_mass: &[F],
        vocab_size: usize,
        word_mass: impl Fn(usize, usize) -> F,
        gamma: F,
        beta: F,
    ) -> Self {
        let topics = topic_mass.len();
        let mut theta: Vec<F> = topic_mass.iter().map(|&m| m + gamma).collect();
        crate::scalar::normalize_in_place(&mut theta);
        let mut phi = Vec::with_capacity(topics * vocab_size);
        for k in 0..topics {
            let start = phi.len();
            phi.extend((0..vocab_size).map(|w| word_mass(k, w) + beta));
            crate::scalar::normalize_in_place(&mut phi[start..]);
        }
        ModelParams { topics, vocab_size, theta, phi }
    }

    /// Parameters implied by the priors alone.
    pub fn prior_only(topics: usize, vocab_size: usize) -> Self {
        let zeros = vec![F::zero(); topics];
        ModelParams::from_masses(&zeros, vocab_size, |_, _| F::zero(), F::one(), F::one())
    }

    pub fn topics(&self) -> usize {
        self.topics
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn theta(&self) -> &[F] {
        &self.theta
    }

    pub fn phi_row(&self, k: usize) -> &[F] {
        &self.phi[k * self.vocab_size..(k + 1) * self.vocab_size]
    }

    #[inline]
    pub fn phi(&self, k: usize, w: usize) -> F {
        self.phi[k * self.vocab_size + w]
    }

    /// Largest deviation of `theta` or any `phi` row from unit mass.
    pub fn normalization_error(&self) -> F {
        let t: F = self.theta.iter().copied().sum();
        let mut worst = (t - F::one()).abs();
        for k in 0..self.topics {
            let r: F = self.phi_row(k).iter().copied().sum();
            worst = worst.max((r - F::one()).abs());
        }
        worst
    }

    /// Top `n` word ids of topic `k` by descending probability, ties by
    /// lower id.
    pub fn top_words(&self, k: usize, n: usize) -> Vec<(usize, F)> {
        let mut ids: Vec<usize> = (0..self.vocab_size).collect();
        let row = self.phi_row(k);
        ids.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
        ids.into_iter().take(n).map(|w| (w, row[w])).collect()
    }
}

/// Restores `theta_k = (n_k + gamma) / (N_B + K gamma)` and
/// `phi_{k,w} = (n_{w|k} + beta) / (n_{.|k} + W beta)` from hard counts.
pub fn restore_params<F: Scalar>(counts: &CountState, hyper: &Hyperparams) -> ModelParams<F> {
    let n_k: Vec<F> = counts.topic_counts().iter().map(|&c| F::of_count(c)).collect();
    ModelParams::from_masses(
        &n_k,
        counts.vocab_size(),
        |k, w| F::of_count(counts.n_wk(w, k)),
        F::of(hyper.gamma),
        F::of(hyper.beta),
    )
}

/// `p(b) = sum_k theta_k phi_{k,w1} phi_{k,w2}`.
pub fn biterm_likelihood<F: Scalar>(params: &ModelParams<F>, b: Biterm) -> Result<F> {
    b.check(params.vocab_size)?;
    Ok(biterm_likelihood_unchecked(params, b))
}

#[inline]
fn biterm_likelihood_unchecked<F: Scalar>(params: &ModelParams<F>, b: Biterm) -> F {
    let mut p = F::zero();
    for k in 0..params.topics {
        p += params.theta[k] * params.phi(k, b.w1()) * params.phi(k, b.w2());
    }
    p
}

/// Mean log-likelihood of the held-out biterms. Zero-probability biterms
/// contribute `log(F::likelihood_floor())`.
pub fn avg_test_loglik<F: Scalar>(params: &ModelParams<F>, test: &[Biterm]) -> Result<F> {
    if test.is_empty() {
        return Err(BtmError::EmptyTestSet);
    }
    for b in test {
        b.check(params.vocab_size)?;
    }
    let floor = F::likelihood_floor();
    let partial: Vec<f64> = test
        .par_chunks(4096)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&b| biterm_likelihood_unchecked(params, b).max(floor).ln().as_f64())
                .sum::<f64>()
        })
        .collect();
    let total: f64 = partial.iter().sum();
    Ok(F::of(total / test.len() as f64))
}

/// A trained model plus the metadata written to snapshot files.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot<F> {
    pub params: ModelParams<F>,
    pub gamma: f64,
    pub beta: f64,
    pub backend: String,
    pub processed: u64,
}

const SNAPSHOT_MAGIC: &str = "# btm-snapshot v1";

fn fmt_sci<F: Scalar>(x: F) -> String {
    format!("{:.*e}", F::SNAPSHOT_DIGITS - 1, x)
}

impl<F: Scalar> Snapshot<F> {
    /// Header lines `K`, `W`, `gamma`, `beta`, `backend`, `processed`, then
    /// one line of `theta` and `K` lines of `phi`, space separated.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let p = &self.params;
        writeln!(out, "{SNAPSHOT_MAGIC}")?;
        writeln!(out, "K {}", p.topics)?;
        writeln!(out, "W {}", p.vocab_size)?;
        writeln!(out, "gamma {}", fmt_sci(self.gamma))?;
        writeln!(out, "beta {}", fmt_sci(self.beta))?;
        writeln!(out, "backend {}", self.backend)?;
        writeln!(out, "processed {}", self.processed)?;
        let line = |v: &[F]| v.iter().map(|&x| fmt_sci(x)).collect::<Vec<_>>().join(" ");
        writeln!(out, "{}", line(&p.theta))?;
        for k in 0..p.topics {
            writeln!(out, "{}", line(p.phi_row(k)))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(BtmError::parse(0, format!("unexpected end of snapshot, expected {what}"))),
            }
        };
        let (n, magic) = next("header")?;
        if magic.trim() != SNAPSHOT_MAGIC {
            return Err(BtmError::parse(n, "missing snapshot header"));
        }
        fn field(n: usize, line: &str, key: &str) -> Result<String> {
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.trim().to_string()),
                _ => Err(BtmError::parse(n, format!("expected field {key}"))),
            }
        }
        fn num<T: std::str::FromStr>(n: usize, s: &str) -> Result<T> {
            s.parse().map_err(|_| BtmError::parse(n, format!("bad number {s:?}")))
        }
        let (n, l) = next("K")?;
        let topics: usize = num(n, &field(n, &l, "K")?)?;
        let (n, l) = next("W")?;
        let vocab_size: usize = num(n, &field(n, &l, "W")?)?;
        let (n, l) = next("gamma")?;
        let gamma: f64 = num(n, &field(n, &l, "gamma")?)?;
        let (n, l) = next("beta")?;
        let beta: f64 = num(n, &field(n, &l, "beta")?)?;
        let (n, l) = next("backend")?;
        let backend = field(n, &l, "backend")?;
        let (n, l) = next("processed")?;
        let processed: u64 = num(n, &field(n, &l, "processed")?)?;
        let row = |n: usize, l: &str, len: usize| -> Result<Vec<F>> {
            let v: Vec<F> = l.split_whitespace().map(|s| num(n, s)).collect::<Result<_>>()?;
            if v.len() != len {
                return Err(BtmError::parse(n, format!("expected {len} values, found {}", v.len())));
            }
            Ok(v)
        };
        let (n, l) = next("theta")?;
        let theta = row(n, &l, topics)?;
        let mut phi = Vec::with_capacity(topics);
        for _ in 0..topics {
            let (n, l) = next("phi row")?;
            phi.push(row(n, &l, vocab_size)?);
        }
        let params = ModelParams::new(theta, phi)?;
        Ok(Snapshot { params, gamma, beta, backend, processed })
    }
}
