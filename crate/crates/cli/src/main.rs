//! `btm`: preprocess corpora, train and evaluate biterm topic models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use btm_core::BtmError;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Exit code for malformed input files.
pub const EXIT_INPUT: u8 = 3;
/// Exit code for numeric failures, including failed diagnostics.
pub const EXIT_NUMERIC: u8 = 4;
/// Exit code for missing or unreadable files.
pub const EXIT_IO: u8 = 5;
/// Exit code for inconsistent `K` or `W` between inputs.
pub const EXIT_DIMENSION: u8 = 6;
/// Exit code for invalid arguments detected after parsing.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "btm", version, about = "Biterm topic models for short texts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize documents (one per line) into a vocabulary, biterm stream and word counts.
    Preprocess(PreprocessArgs),
    /// Sample a corpus from the generative model.
    Synth(SynthArgs),
    /// Train a model on a biterm stream.
    Train(TrainArgs),
    /// Average held-out log-likelihood of a snapshot.
    Eval(EvalArgs),
    /// Top words per topic.
    Topics(TopicsArgs),
    /// Numerical checks of the divergence derivations and noise premises.
    Diagnose(DiagnoseArgs),
    /// Per-biterm cost measurements.
    Bench(BenchArgs),
    /// Aggregate trace files across seeds.
    Merge(MergeArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw text files, one document per line.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    #[arg(long, short)]
    pub out_dir: PathBuf,
    /// Also write a shuffled train/test split with this train fraction.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, short = 'k')]
    pub topics: usize,
    #[arg(long, short = 'w')]
    pub vocab_size: usize,
    #[arg(long)]
    pub gamma: f64,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub biterms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub split: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgoArg {
    Cgs,
    Obtm,
    Ibtm,
    Scvb0,
    Sdm,
}

impl From<AlgoArg> for btm_core::Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Cgs => btm_core::Algorithm::Cgs,
            AlgoArg::Obtm => btm_core::Algorithm::Obtm,
            AlgoArg::Ibtm => btm_core::Algorithm::Ibtm,
            AlgoArg::Scvb0 => btm_core::Algorithm::Scvb0,
            AlgoArg::Sdm => btm_core::Algorithm::Sdm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HyperUpdateArg {
    SliceEnd,
    PerBiterm,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub algo: AlgoArg,
    /// Training biterm stream.
    #[arg(long)]
    pub train: PathBuf,
    /// Vocabulary file; fixes `W`.
    #[arg(long, required_unless_present = "vocab_size")]
    pub vocab: Option<PathBuf>,
    #[arg(long, short = 'w')]
    pub vocab_size: Option<usize>,
    #[arg(long, short = 'k')]
    pub topics: usize,
    /// Defaults to 50/K.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 10)]
    pub rejuv_len: usize,
    #[arg(long, default_value_t = 1000.0)]
    pub tau: f64,
    /// Defaults to 0.8 for scvb0 and 0.51 for sdm.
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub slice_size: usize,
    #[arg(long, default_value_t = 10)]
    pub inner_iters: usize,
    #[arg(long, value_enum, default_value = "slice-end")]
    pub hyper_update: HyperUpdateArg,
    #[arg(long, default_value_t = 200)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// SDM: draw the sample biterm from a per-word reservoir of this size.
    #[arg(long)]
    pub resample_other: Option<usize>,
    /// SDM: running word counts instead of a pre-pass.
    #[arg(long)]
    pub streaming_counts: bool,
    /// SCVB0: corpus size used by the crude estimates.
    #[arg(long)]
    pub corpus_size: Option<u64>,
    /// SCVB0: disable folding the scale coefficient back into the dummy matrix.
    #[arg(long)]
    pub no_scale_guard: bool,
    /// Held-out stream scored at each checkpoint.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Checkpoint fractions, comma separated, or a count of even checkpoints.
    #[arg(long, default_value = "1")]
    pub checkpoints: String,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, short)]
    pub model: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct TopicsArgs {
    #[arg(long, short)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, short, default_value_t = 10)]
    pub n: usize,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Randomized states for the responsibility comparison.
    #[arg(long, default_value_t = 1000)]
    pub states: usize,
    /// Random count laws for the projection checks.
    #[arg(long, default_value_t = 20)]
    pub laws: usize,
    /// Random (state, word) pairs for the noise check.
    #[arg(long, default_value_t = 5)]
    pub pairs: usize,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    /// Optional biterm stream for the noise check; synthetic otherwise.
    #[arg(long)]
    pub biterms: Option<PathBuf>,
    #[arg(long, short = 'k', default_value_t = 4)]
    pub topics: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["ibtm", "obtm", "scvb0", "sdm"])]
    pub algo: Vec<AlgoArg>,
    #[arg(long, short = 'k', value_delimiter = ',', default_values_t = [64usize, 128])]
    pub topics: Vec<usize>,
    #[arg(long, short = 'w', default_value_t = 2000)]
    pub vocab_size: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [10usize])]
    pub rejuv_len: Vec<usize>,
    #[arg(long, default_value_t = 1000)]
    pub slice_size: usize,
    #[arg(long, default_value_t = 2000)]
    pub batch: usize,
    #[arg(long, default_value_t = 15)]
    pub batches: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }
}

impl From<BtmError> for Failure {
    fn from(e: BtmError) -> Self {
        let code = match &e {
            BtmError::Parse { .. } | BtmError::UnknownWord { .. } => EXIT_INPUT,
            BtmError::Io(_) => EXIT_IO,
            BtmError::DimensionMismatch(_) | BtmError::SupportMismatch(..) => EXIT_DIMENSION,
            BtmError::NonFinite(_)
            | BtmError::CountUnderflow { .. }
            | BtmError::ZeroMeasure
            | BtmError::NegativeWeight(_) => EXIT_NUMERIC,
            BtmError::InvalidHyperparameter(_)
            | BtmError::InvalidRatio(_)
            | BtmError::EmptyTestSet
            | BtmError::InstanceTooLarge { .. }
            | BtmError::ZeroAlpha
            | BtmError::InsufficientOccurrences { .. } => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BTM_LOG", "warn")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
