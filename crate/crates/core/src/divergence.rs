//! α-divergences between finite measures, local projections and the
//! martingale-noise diagnostic for the SDM word update.

use rand::Rng;

use crate::corpus::Biterm;
use crate::error::{BtmError, Result};
use crate::model::Hyperparams;
use crate::scalar::Scalar;
use crate::sdm::{sdm_responsibility, SdmState};

/// Nonnegative weights over a finite support; need not be normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMeasure<F> {
    weights: Vec<F>,
}

impl<F: Scalar> FiniteMeasure<F> {
    pub fn new(weights: Vec<F>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !(*w >= F::zero()) || !w.is_finite()) {
            return Err(BtmError::NegativeWeight(i));
        }
        if !weights.iter().any(|&w| w > F::zero()) {
            return Err(BtmError::ZeroMeasure);
        }
        Ok(FiniteMeasure { weights })
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Generalized `KL[p||q] = sum p ln(p/q) - p + q`, with `0 ln 0 = 0`.
/// Infinite when `q` vanishes where `p` does not.
pub fn generalized_kl<F: Scalar>(p: &FiniteMeasure<F>, q: &FiniteMeasure<F>) -> Result<F> {
    if p.len() != q.len() {
        return Err(BtmError::SupportMismatch(p.len(), q.len()));
    }
    let mut total = F::zero();
    for (&a, &b) in p.weights.iter().zip(&q.weights) {
        total += if a == F::zero() {
            b
        } else if b == F::zero() {
            return Ok(F::infinity());
        } else {
            a * (a / b).ln() - a + b
        };
    }
    Ok(total)
}

/// `D_alpha[p||q] = sum [alpha p + (1-alpha) q - p^alpha q^(1-alpha)] / (alpha (1-alpha))`.
///
/// `alpha = 1` returns `KL[p||q]` and `alpha = 0` returns `KL[q||p]`.
/// A power of a zero base with positive exponent is zero; with a
/// nonpositive exponent the divergence is infinite.
pub fn alpha_divergence<F: Scalar>(p: &FiniteMeasure<F>, q: &FiniteMeasure<F>, alpha: F) -> Result<F> {
    if p.len() != q.len() {
        return Err(BtmError::SupportMismatch(p.len(), q.len()));
    }
    if alpha == F::one() {
        return generalized_kl(p, q);
    }
    if alpha == F::zero() {
        return generalized_kl(q, p);
    }
    let beta = F::one() - alpha;
    let denom = alpha * beta;
    let mut total = F::zero();
    for (&a, &b) in p.weights.iter().zip(&q.weights) {
        let cross = if a == F::zero() || b == F::zero() {
            let a_blows = a == F::zero() && alpha <= F::zero();
            let b_blows = b == F::zero() && beta <= F::zero();
            if a_blows || b_blows {
                return Ok(F::infinity());
            }
            F::zero()
        } else {
            a.powf(alpha) * b.powf(beta)
        };
        total += alpha * a + beta * b - cross;
    }
    Ok((total / denom).max(F::zero()))
}

/// Law of a nonnegative count: sorted distinct values with probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl CountDistribution {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(BtmError::SupportMismatch(values.len(), probs.len()));
        }
        if let Some(i) = probs.iter().position(|p| !(*p >= 0.0)) {
            return Err(BtmError::NegativeWeight(i));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(BtmError::DimensionMismatch("count values must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(BtmError::ZeroMeasure);
        }
        Ok(CountDistribution { values, probs: probs.into_iter().map(|p| p / total).collect() })
    }

    /// Law of `sum_j m_j X_j` for independent `X_j ~ Bernoulli(p_j)` with
    /// integer multiplicities `m_j`.
    pub fn weighted_bernoulli_sum(terms: &[(f64, u32)]) -> Result<Self> {
        let max: usize = terms.iter().map(|&(_, m)| m as usize).sum();
        let mut law = vec![0.0; max + 1];
        law[0] = 1.0;
        let mut reach = 0;
        for (j, &(p, m)) in terms.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(BtmError::NegativeWeight(j));
            }
            let m = m as usize;
            for n in (0..=reach).rev() {
                let mass = law[n];
                law[n] = mass * (1.0 - p);
                law[n + m] += mass * p;
            }
            reach += m;
        }
        let (values, probs) = law.iter().enumerate().filter(|(_, &p)| p > 0.0).map(|(n, &p)| (n as f64, p)).unzip();
        Self::new(values, probs)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// `E[g(n)^alpha]^(1/alpha)`.
    pub fn power_mean(&self, alpha: f64, g: impl Fn(f64) -> f64) -> f64 {
        let m: f64 = self.values.iter().zip(&self.probs).map(|(&v, &p)| p * g(v).powf(alpha)).sum();
        m.powf(1.0 / alpha)
    }
}

/// Which variational factor is projected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    /// Topic factor `a_k`, target `n_k + gamma`.
    A,
    /// Word factor `b_{k,w}`, target `n_{w|k} + beta`.
    B,
    /// Normalizer `c_k`, target factor `1 / (n_{.|k} + W beta)`.
    C,
}

/// Target value of the factor at count `n`.
fn target(kind: ProjectionKind, n: f64, prior: f64) -> f64 {
    match kind {
        ProjectionKind::A | ProjectionKind::B => n + prior,
        ProjectionKind::C => 1.0 / (n + prior),
    }
}

/// Factor contributed by the candidate value `x`.
fn factor(kind: ProjectionKind, x: f64) -> f64 {
    match kind {
        ProjectionKind::A | ProjectionKind::B => x,
        ProjectionKind::C => 1.0 / x,
    }
}

/// Closed-form minimizer of [`local_objective`].
///
/// For `A` and `B` this is `E[(n + prior)^alpha]^(1/alpha)`. For `C` the
/// projected factor is `1 / c`, so the returned `c` is the reciprocal of
/// `E[(1/(n + prior))^alpha]^(1/alpha)`; with `alpha = -1` it equals
/// `E[n] + prior`. `prior` is `gamma`, `beta` or `W beta` respectively.
pub fn local_projection_solution(dist: &CountDistribution, prior: f64, alpha: f64, kind: ProjectionKind) -> Result<f64> {
    if alpha == 0.0 {
        return Err(BtmError::ZeroAlpha);
    }
    if !(prior > 0.0) {
        return Err(BtmError::InvalidHyperparameter(format!("prior must be positive, got {prior}")));
    }
    let g = dist.power_mean(alpha, |n| target(kind, n, prior));
    Ok(factor(kind, g))
}

/// `D_alpha[target(n) P(n) || factor(x) P(n)]` summed over the count law:
/// the local divergence restricted to the projected factor, with the
/// other factors held fixed (they scale both sides and cancel in the
/// argmin).
pub fn local_objective(dist: &CountDistribution, prior: f64, alpha: f64, kind: ProjectionKind, x: f64) -> Result<f64> {
    let f = factor(kind, x);
    let p = FiniteMeasure::new(dist.values.iter().zip(&dist.probs).map(|(&n, &pr)| pr * target(kind, n, prior)).collect())?;
    let q = FiniteMeasure::new(dist.probs.iter().map(|&pr| pr * f).collect())?;
    alpha_divergence(&p, &q, alpha)
}

/// Exhaustive search of `objective` over `lo, lo + step, ..., hi`.
pub fn grid_minimize(lo: f64, hi: f64, step: f64, objective: impl Fn(f64) -> f64) -> f64 {
    let n = ((hi - lo) / step).ceil() as u64;
    let mut best = (lo, f64::INFINITY);
    for i in 0..=n {
        let x = (lo + i as f64 * step).min(hi);
        let v = objective(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best.0
}

/// Empirical mean and standard error of a vector-valued noise term.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
    /// Mean squared norm of the noise.
    pub second_moment: f64,
}

impl NoiseReport {
    /// Largest `|mean_k| / stderr_k`; zero where both vanish.
    pub fn max_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.stderr)
            .map(|(&m, &s)| if m == 0.0 { 0.0 } else if s == 0.0 { f64::INFINITY } else { m.abs() / s })
            .fold(0.0, f64::max)
    }
}

/// Responsibilities of the biterms `i' != i` that contain `w`, where `i`
/// is the first biterm containing `w`.
fn noise_population<F: Scalar>(
    state: &SdmState<F>,
    hyper: &Hyperparams,
    biterms: &[Biterm],
    w: usize,
) -> Result<Vec<Vec<f64>>> {
    if w >= state.vocab_size() {
        return Err(BtmError::UnknownWord { id: w, vocab_size: state.vocab_size() });
    }
    let holders: Vec<Biterm> = biterms.iter().copied().filter(|b| b.contains(w)).collect();
    if holders.len() < 2 {
        return Err(BtmError::InsufficientOccurrences { word: w, count: holders.len(), needed: 2 });
    }
    Ok(holders[1..]
        .iter()
        .map(|&b| sdm_responsibility(state, hyper, b).into_iter().map(|x| x.as_f64()).collect())
        .collect())
}

/// `xi_{i',k} = n_{\i,w} q(z_{i'} = k | b_{i'}) - E[n_{\i,w|k}]` for every `i'`.
fn noise_terms(population: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = population.len() as f64;
    let k = population[0].len();
    let mut expected = vec![0.0; k];
    for q in population {
        for (e, &v) in expected.iter_mut().zip(q) {
            *e += v;
        }
    }
    population.iter().map(|q| q.iter().zip(&expected).map(|(&v, &e)| n * v - e).collect()).collect()
}

fn summarize(terms: impl Iterator<Item = Vec<f64>>, k: usize) -> NoiseReport {
    let mut n = 0usize;
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for xi in terms {
        n += 1;
        for j in 0..k {
            sum[j] += xi[j];
            sq[j] += xi[j] * xi[j];
        }
    }
    let nf = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let stderr = (0..k)
        .map(|j| {
            if n < 2 {
                0.0
            } else {
                let var = ((sq[j] - nf * mean[j] * mean[j]) / (nf - 1.0)).max(0.0);
                (var / nf).sqrt()
            }
        })
        .collect();
    NoiseReport { mean, stderr, samples: n, second_moment: sq.iter().sum::<f64>() / nf }
}

/// Draws `i'` uniformly among the other biterms containing `w` and reports
/// the empirical mean and standard error of the noise term.
pub fn martingale_noise_check<F: Scalar, R: Rng + ?Sized>(
    state: &SdmState<F>,
    hyper: &Hyperparams,
    biterms: &[Biterm],
    w: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<NoiseReport> {
    let population = noise_population(state, hyper, biterms, w)?;
    let terms = noise_terms(&population);
    let k = state.topics();
    Ok(summarize((0..n_samples).map(|_| terms[rng.random_range(0..terms.len())].clone()), k))
}

/// Averages the noise term over every admissible `i'`.
pub fn martingale_noise_exhaustive<F: Scalar>(
    state: &SdmState<F>,
    hyper: &Hyperparams,
    biterms: &[Biterm],
    w: usize,
) -> Result<NoiseReport> {
    let population = noise_population(state, hyper, biterms, w)?;
    Ok(summarize(noise_terms(&population).into_iter(), state.topics()))
}
