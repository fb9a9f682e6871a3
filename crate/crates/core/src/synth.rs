//! Sampling corpora from the BTM generative process.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::Gamma;
use rayon::prelude::*;

use crate::corpus::Biterm;
use crate::error::{BtmError, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;

/// Biterms generated per independently seeded chunk.
const CHUNK: usize = 8192;

/// `ln G` for `G ~ Gamma(shape, 1)`. Shapes below one use
/// `G = G' U^(1/shape)` with `G' ~ Gamma(shape + 1, 1)` so tiny shapes do
/// not underflow.
fn ln_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

/// A draw from the symmetric Dirichlet with concentration `alpha` over
/// `dim` components.
pub fn sample_dirichlet<R: Rng + ?Sized>(alpha: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let logs: Vec<f64> = (0..dim).map(|_| ln_gamma_draw(alpha, rng)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut v: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    crate::scalar::normalize_in_place(&mut v);
    v
}

/// Derived seed of chunk `i`.
fn chunk_seed(seed: u64, i: u64) -> u64 {
    let mut z = seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `theta ~ Dir(gamma)`, `phi_k ~ Dir(beta)` and `n_biterms` biterms,
/// each from `z ~ theta` and two words drawn independently from `phi_z`.
///
/// Output depends only on the arguments.
pub fn generate<F: Scalar>(
    topics: usize,
    vocab_size: usize,
    gamma: f64,
    beta: f64,
    n_biterms: usize,
    seed: u64,
) -> Result<(ModelParams<F>, Vec<Biterm>)> {
    if topics == 0 || vocab_size == 0 || n_biterms == 0 {
        return Err(BtmError::InvalidHyperparameter("K, W and N_B must be positive".into()));
    }
    if !(gamma > 0.0 && gamma.is_finite() && beta > 0.0 && beta.is_finite()) {
        return Err(BtmError::InvalidHyperparameter(format!("gamma={gamma}, beta={beta}")));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let theta = sample_dirichlet(gamma, topics, &mut rng);
    let phi: Vec<Vec<f64>> = (0..topics).map(|_| sample_dirichlet(beta, vocab_size, &mut rng)).collect();

    let topic_dist = WeightedIndex::new(&theta).map_err(|e| BtmError::NonFinite(e.to_string()))?;
    let word_dists = phi
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| BtmError::NonFinite(e.to_string())))
        .collect::<Result<Vec<_>>>()?;

    let chunks = n_biterms.div_ceil(CHUNK);
    let biterms: Vec<Biterm> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = StdRng::seed_from_u64(chunk_seed(seed, c as u64));
            let len = CHUNK.min(n_biterms - c * CHUNK);
            let topic_dist = &topic_dist;
            let word_dists = &word_dists;
            (0..len)
                .map(move |_| {
                    let z = topic_dist.sample(&mut rng);
                    let a = word_dists[z].sample(&mut rng);
                    let b = word_dists[z].sample(&mut rng);
                    Biterm::new(a, b)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let cast = |v: &[f64]| v.iter().map(|&x| F::of(x)).collect::<Vec<F>>();
    let params = ModelParams::new(cast(&theta), phi.iter().map(|r| cast(r)).collect())?;
    Ok((params, biterms))
}
