//! Likelihood-vs-progress traces, cross-seed aggregation and per-biterm
//! cost measurements.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::backend::{Algorithm, TrainConfig, Trainer};
use crate::corpus::Biterm;
use crate::error::{BtmError, Result};
use crate::model::avg_test_loglik;
use crate::scalar::Scalar;

/// One checkpoint of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub backend: String,
    pub seed: u64,
    /// Fraction of training biterms consumed.
    pub fraction: f64,
    pub avg_test_loglik: f64,
    /// Cumulative training time, evaluation excluded.
    pub wall_ms: f64,
    /// Heap bytes held by the inference state.
    pub rss_bytes: u64,
    pub biterms_per_sec: f64,
}

fn csv_err(e: csv::Error) -> BtmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => BtmError::Io(io),
        other => BtmError::parse(0, format!("{other:?}")),
    }
}

fn check_checkpoints(checkpoints: &[f64]) -> Result<()> {
    if checkpoints.is_empty() {
        return Err(BtmError::InvalidRatio(f64::NAN));
    }
    let mut prev = 0.0;
    for &c in checkpoints {
        if !(c > prev && c <= 1.0) {
            return Err(BtmError::InvalidRatio(c));
        }
        prev = c;
    }
    Ok(())
}

/// `n` evenly spaced checkpoints `1/n, 2/n, ..., 1`.
pub fn even_checkpoints(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64 / n as f64).collect()
}

/// Feeds `train` in order, pausing at each checkpoint fraction to restore
/// parameters and score `test`. The last record always follows
/// [`Trainer::finish`] when the final checkpoint is 1.
pub fn trace_run<F: Scalar>(trainer: &mut Trainer<F>, train: &[Biterm], test: &[Biterm], checkpoints: &[f64]) -> Result<Vec<TraceRecord>> {
    check_checkpoints(checkpoints)?;
    if test.is_empty() {
        return Err(BtmError::EmptyTestSet);
    }
    let n = train.len();
    let mut records = Vec::with_capacity(checkpoints.len());
    let mut fed = 0usize;
    let mut elapsed = 0.0f64;
    for &c in checkpoints {
        let upto = ((c * n as f64).round() as usize).min(n);
        let start = Instant::now();
        trainer.feed_all(&train[fed..upto])?;
        fed = upto;
        if c == 1.0 || trainer.algorithm() == Algorithm::Cgs {
            trainer.finish()?;
        }
        elapsed += start.elapsed().as_secs_f64() * 1e3;
        let params = trainer.params();
        let ll = avg_test_loglik(&params, test)?.as_f64();
        records.push(TraceRecord {
            backend: trainer.algorithm().name().to_string(),
            seed: trainer.config().hyper.seed,
            fraction: c,
            avg_test_loglik: ll,
            wall_ms: elapsed,
            rss_bytes: trainer.heap_bytes() as u64,
            biterms_per_sec: if elapsed > 0.0 { fed as f64 / (elapsed / 1e3) } else { 0.0 },
        });
    }
    Ok(records)
}

/// Builds a fresh trainer for `config` and traces it.
pub fn trace_config<F: Scalar>(
    config: TrainConfig,
    vocab_size: usize,
    train: &[Biterm],
    test: &[Biterm],
    checkpoints: &[f64],
) -> Result<Vec<TraceRecord>> {
    let mut t = Trainer::<F>::new(config, vocab_size, train)?;
    trace_run(&mut t, train, test, checkpoints)
}

pub fn write_trace<W: Write>(records: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    csv::Reader::from_reader(input).deserialize().map(|r| r.map_err(csv_err)).collect()
}

/// Cross-seed summary of one backend at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub backend: String,
    pub fraction: f64,
    pub runs: usize,
    pub mean_loglik: f64,
    /// Sample standard deviation (`n - 1` denominator); zero for one run.
    pub std_loglik: f64,
    pub mean_wall_ms: f64,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups records by backend and checkpoint. Output is sorted by backend
/// name, then fraction.
pub fn merge_traces(records: &[TraceRecord]) -> Vec<TraceSummary> {
    let mut groups: BTreeMap<(String, u64), Vec<&TraceRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.backend.clone(), r.fraction.to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((backend, bits), rs)| {
            let ll: Vec<f64> = rs.iter().map(|r| r.avg_test_loglik).collect();
            let (mean_loglik, std_loglik) = mean_std(&ll);
            TraceSummary {
                backend,
                fraction: f64::from_bits(bits),
                runs: rs.len(),
                mean_loglik,
                std_loglik,
                mean_wall_ms: rs.iter().map(|r| r.wall_ms).sum::<f64>() / rs.len() as f64,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(summary: &[TraceSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in summary {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Asymptotic classes of a backend: per-biterm update cost and memory.
pub fn cost_class(algorithm: Algorithm) -> (&'static str, &'static str) {
    match algorithm {
        Algorithm::Cgs => ("O(K) per biterm per sweep", "O(K(1+W)+N_B)"),
        Algorithm::Ibtm => ("O(R)", "O(K(1+W)+B_t)"),
        Algorithm::Obtm => ("O(B_t(1+KW))", "O(K(1+W)+N_B)"),
        Algorithm::Scvb0 => ("O(K)", "O(K(1+W))"),
        Algorithm::Sdm => ("O(K)", "O(K(1+W))"),
    }
}

/// Predicted classes next to a measured cost.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub algorithm: Algorithm,
    pub topics: usize,
    pub vocab_size: usize,
    pub rejuv_len: usize,
    pub slice_size: usize,
    pub update_class: &'static str,
    pub memory_class: &'static str,
    /// Median over batches of wall time per biterm.
    pub median_ns_per_biterm: f64,
    pub state_bytes: usize,
}

/// Settings of a cost measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostProbe {
    pub topics: usize,
    pub vocab_size: usize,
    pub rejuv_len: usize,
    pub slice_size: usize,
    /// Biterms fed before timing starts.
    pub warmup: usize,
    pub batch: usize,
    pub batches: usize,
    pub seed: u64,
}

impl CostProbe {
    pub fn new(topics: usize, vocab_size: usize) -> Self {
        CostProbe { topics, vocab_size, rejuv_len: 10, slice_size: 1000, warmup: 2000, batch: 2000, batches: 15, seed: 0 }
    }
}

pub fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Streams uniform random biterms through a fresh backend and reports the
/// median per-biterm time over equal batches. The batch sampler is timed
/// per biterm per sweep.
pub fn cost_accounting(algorithm: Algorithm, probe: CostProbe) -> Result<CostReport> {
    let mut rng = StdRng::seed_from_u64(probe.seed);
    let total = probe.warmup + probe.batch * probe.batches;
    let stream: Vec<Biterm> = (0..total)
        .map(|_| Biterm::new(rng.random_range(0..probe.vocab_size), rng.random_range(0..probe.vocab_size)))
        .collect();
    let mut hyper = crate::model::Hyperparams::defaults_for(probe.topics);
    hyper.rejuv_len = probe.rejuv_len;
    hyper.seed = probe.seed;
    let mut config = TrainConfig::new(algorithm, hyper);
    config.slice_size = probe.slice_size;
    config.sweeps = 1;
    let mut samples = Vec::with_capacity(probe.batches);
    let state_bytes;
    if algorithm == Algorithm::Cgs {
        let mut sampler = crate::cgs::GibbsSampler::new(config.hyper.clone(), probe.vocab_size, stream, &mut rng)?;
        for _ in 0..probe.batches {
            let start = Instant::now();
            sampler.sweep(&mut rng)?;
            samples.push(start.elapsed().as_nanos() as f64 / total as f64);
        }
        state_bytes = sampler.state().heap_bytes();
    } else {
        let mut t = Trainer::<f64>::new(config, probe.vocab_size, &stream)?;
        t.feed_all(&stream[..probe.warmup])?;
        for chunk in stream[probe.warmup..].chunks(probe.batch) {
            let start = Instant::now();
            t.feed_all(chunk)?;
            samples.push(start.elapsed().as_nanos() as f64 / chunk.len() as f64);
        }
        state_bytes = t.heap_bytes();
    }
    let (update_class, memory_class) = cost_class(algorithm);
    Ok(CostReport {
        algorithm,
        topics: probe.topics,
        vocab_size: probe.vocab_size,
        rejuv_len: probe.rejuv_len,
        slice_size: probe.slice_size,
        update_class,
        memory_class,
        median_ns_per_biterm: median(&mut samples),
        state_bytes,
    })
}
