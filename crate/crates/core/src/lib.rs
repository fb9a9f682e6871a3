//! Biterm topic model inference.
//!
//! Five backends share one model core: batch collapsed Gibbs sampling
//! ([`cgs`]), time-sliced online Gibbs ([`online`]), incremental Gibbs with
//! rejuvenation ([`incremental`]), stochastic CVB0 ([`scvb0`]) and
//! stochastic divergence minimization ([`sdm`]). Real-valued routines are
//! generic over [`Scalar`] (`f32` or `f64`); the aliases below fix `f64`
//! or `f32`.
//!
//! ```
//! use btm_core::{backend, corpus, synth, model, Algorithm, Hyperparams, TrainConfig};
//!
//! let (_, biterms) = synth::generate::<f64>(3, 40, 1.0, 0.1, 5_000, 7).unwrap();
//! let (train, test) = corpus::split_shuffle(&biterms, 0.8, 1).unwrap();
//! let config = TrainConfig::new(Algorithm::Sdm, Hyperparams::defaults_for(3));
//! let params: model::ModelParams<f64> = backend::train(config, 40, &train).unwrap();
//! let ll = model::avg_test_loglik(&params, &test).unwrap();
//! assert!(ll < 0.0);
//! ```

pub mod backend;
pub mod cgs;
pub mod corpus;
pub mod divergence;
pub mod error;
pub mod incremental;
pub mod metrics;
pub mod model;
pub mod online;
pub mod sampling;
pub mod scalar;
pub mod schedule;
pub mod scvb0;
pub mod sdm;
pub mod synth;

pub use backend::{Algorithm, TrainConfig, Trainer};
pub use corpus::{Biterm, Corpus, Vocabulary};
pub use error::{BtmError, Result};
pub use model::{CountState, Hyperparams, ModelParams, Snapshot};
pub use scalar::Scalar;
pub use schedule::StepSchedule;

pub type ModelParamsF64 = ModelParams<f64>;
pub type ModelParamsF32 = ModelParams<f32>;
pub type SnapshotF64 = Snapshot<f64>;
pub type SnapshotF32 = Snapshot<f32>;
pub type Scvb0StateF64 = scvb0::Scvb0State<f64>;
pub type Scvb0StateF32 = scvb0::Scvb0State<f32>;
pub type SdmStateF64 = sdm::SdmState<f64>;
pub type SdmStateF32 = sdm::SdmState<f32>;
pub type TrainerF64 = Trainer<f64>;
pub type TrainerF32 = Trainer<f32>;
