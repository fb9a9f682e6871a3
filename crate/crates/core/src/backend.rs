//! Uniform driver over the five inference backends.

use std::fmt;
use std::str::FromStr;

use rand::rngs::StdRng;
use rand::SeedableRng;

use crate::cgs::GibbsSampler;
use crate::corpus::{word_biterm_counts, Biterm};
use crate::error::{BtmError, Result};
use crate::incremental::IncrementalBtm;
use crate::model::{Hyperparams, ModelParams};
use crate::online::{HyperUpdate, OnlineBtm};
use crate::scalar::Scalar;
use crate::scvb0::Scvb0Btm;
use crate::sdm::{SdmBtm, WordCountSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Cgs,
    Obtm,
    Ibtm,
    Scvb0,
    Sdm,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Algorithm::Cgs, Algorithm::Obtm, Algorithm::Ibtm, Algorithm::Scvb0, Algorithm::Sdm];
    pub const STREAMING: [Algorithm; 4] = [Algorithm::Obtm, Algorithm::Ibtm, Algorithm::Scvb0, Algorithm::Sdm];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Cgs => "cgs",
            Algorithm::Obtm => "obtm",
            Algorithm::Ibtm => "ibtm",
            Algorithm::Scvb0 => "scvb0",
            Algorithm::Sdm => "sdm",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = BtmError;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| BtmError::InvalidHyperparameter(format!("unknown algorithm {s:?}")))
    }
}

/// Everything needed to build a trainer besides the data.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub hyper: Hyperparams,
    /// Batch Gibbs sweeps.
    pub sweeps: usize,
    /// Online slice size `B_t`.
    pub slice_size: usize,
    /// Online Gibbs passes per slice.
    pub inner_iters: usize,
    pub hyper_update: HyperUpdate,
    /// SDM: draw the sample biterm from a per-word reservoir of this size.
    pub resample_other: Option<usize>,
    /// SDM: running word counts instead of a pre-pass.
    pub streaming_counts: bool,
    /// SCVB0: `|B|` used by the crude estimates; defaults to the training
    /// stream length.
    pub corpus_size: Option<u64>,
    /// SCVB0: fold the scale coefficient back into the dummy matrix.
    pub scale_guard: bool,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, hyper: Hyperparams) -> Self {
        TrainConfig {
            algorithm,
            hyper,
            sweeps: 200,
            slice_size: 10_000,
            inner_iters: 10,
            hyper_update: HyperUpdate::default(),
            resample_other: None,
            streaming_counts: false,
            corpus_size: None,
            scale_guard: true,
        }
    }
}

#[derive(Debug, Clone)]
enum Engine<F> {
    Cgs { buffer: Vec<Biterm>, sampler: Option<GibbsSampler> },
    Obtm(OnlineBtm<F>),
    Ibtm(IncrementalBtm),
    Scvb0(Scvb0Btm<F>),
    Sdm(SdmBtm<F>),
}

/// A backend plus its random stream. Biterms are fed one at a time; the
/// batch sampler buffers them and runs its sweeps when parameters are
/// requested.
#[derive(Debug, Clone)]
pub struct Trainer<F> {
    config: TrainConfig,
    vocab_size: usize,
    engine: Engine<F>,
    rng: StdRng,
    processed: u64,
}

impl<F: Scalar> Trainer<F> {
    /// `train` is consulted only for the SCVB0 corpus size and the SDM
    /// word-count pre-pass; it is not consumed.
    pub fn new(config: TrainConfig, vocab_size: usize, train: &[Biterm]) -> Result<Self> {
        config.hyper.validate()?;
        let mut rng = StdRng::seed_from_u64(config.hyper.seed);
        let hyper = config.hyper.clone();
        let engine = match config.algorithm {
            Algorithm::Cgs => Engine::Cgs { buffer: Vec::with_capacity(train.len()), sampler: None },
            Algorithm::Obtm => Engine::Obtm(OnlineBtm::new(
                hyper,
                vocab_size,
                config.slice_size,
                config.inner_iters,
                config.hyper_update,
            )?),
            Algorithm::Ibtm => Engine::Ibtm(IncrementalBtm::new(hyper, vocab_size)?),
            Algorithm::Scvb0 => {
                let n = config.corpus_size.unwrap_or(train.len() as u64).max(1);
                let mut s = Scvb0Btm::new(hyper, vocab_size, n, &mut rng)?;
                s.state_mut().guard = config.scale_guard;
                Engine::Scvb0(s)
            }
            Algorithm::Sdm => {
                let (counts, source) = if config.streaming_counts {
                    (None, WordCountSource::Streaming)
                } else {
                    (Some(word_biterm_counts(train, vocab_size)), WordCountSource::Prepass)
                };
                let mut s = SdmBtm::new(hyper, vocab_size, counts, source, &mut rng)?;
                if let Some(cap) = config.resample_other {
                    s = s.with_resample_other(cap);
                }
                Engine::Sdm(s)
            }
        };
        Ok(Trainer { config, vocab_size, engine, rng, processed: 0 })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn feed(&mut self, b: Biterm) -> Result<()> {
        let rng = &mut self.rng;
        match &mut self.engine {
            Engine::Cgs { buffer, sampler } => {
                b.check(self.vocab_size)?;
                buffer.push(b);
                *sampler = None;
            }
            Engine::Obtm(m) => m.push(b, rng)?,
            Engine::Ibtm(m) => m.process(b, rng)?,
            Engine::Scvb0(m) => m.process(b)?,
            Engine::Sdm(m) => m.process(b, rng)?,
        }
        self.processed += 1;
        Ok(())
    }

    pub fn feed_all(&mut self, biterms: &[Biterm]) -> Result<()> {
        biterms.iter().try_for_each(|&b| self.feed(b))
    }

    /// Completes pending work: the batch sampler runs its sweeps over
    /// everything fed so far and the online backend processes its partial
    /// slice.
    pub fn finish(&mut self) -> Result<()> {
        let rng = &mut self.rng;
        match &mut self.engine {
            Engine::Cgs { buffer, sampler } => {
                if sampler.is_none() && !buffer.is_empty() {
                    let mut s = GibbsSampler::new(self.config.hyper.clone(), self.vocab_size, buffer.clone(), rng)?;
                    s.run(self.config.sweeps, rng)?;
                    *sampler = Some(s);
                }
            }
            Engine::Obtm(m) => m.flush(rng)?,
            _ => {}
        }
        Ok(())
    }

    /// Current point estimate. The online backend reports its last
    /// completed slice; the batch sampler reports its last finished run,
    /// or the priors before any.
    pub fn params(&self) -> ModelParams<F> {
        let hyper = &self.config.hyper;
        match &self.engine {
            Engine::Cgs { sampler: Some(s), .. } => s.params(),
            Engine::Cgs { sampler: None, .. } => {
                crate::model::restore_params(&crate::model::CountState::new(hyper.topics, self.vocab_size), hyper)
            }
            Engine::Obtm(m) => m.params().clone(),
            Engine::Ibtm(m) => m.params(),
            Engine::Scvb0(m) => m.params(),
            Engine::Sdm(m) => m.params(),
        }
    }

    /// Heap bytes of the inference state. For the batch sampler this is
    /// the buffered corpus plus the sampler's counts and assignments.
    pub fn heap_bytes(&self) -> usize {
        match &self.engine {
            Engine::Cgs { buffer, sampler } => {
                std::mem::size_of::<Biterm>() * buffer.capacity()
                    + sampler.as_ref().map_or(0, |s| s.state().heap_bytes() + std::mem::size_of::<Biterm>() * buffer.len())
            }
            Engine::Obtm(m) => m.heap_bytes(),
            Engine::Ibtm(m) => m.heap_bytes(),
            Engine::Scvb0(m) => m.heap_bytes(),
            Engine::Sdm(m) => m.heap_bytes(),
        }
    }

    pub fn scvb0(&self) -> Option<&Scvb0Btm<F>> {
        match &self.engine {
            Engine::Scvb0(m) => Some(m),
            _ => None,
        }
    }

    pub fn sdm(&self) -> Option<&SdmBtm<F>> {
        match &self.engine {
            Engine::Sdm(m) => Some(m),
            _ => None,
        }
    }
}

/// Feeds the whole stream, finishes and returns the restored parameters.
pub fn train<F: Scalar>(config: TrainConfig, vocab_size: usize, train: &[Biterm]) -> Result<ModelParams<F>> {
    let mut t = Trainer::new(config, vocab_size, train)?;
    t.feed_all(train)?;
    t.finish()?;
    Ok(t.params())
}
