use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use btm_core::backend::{Algorithm, TrainConfig, Trainer};
use btm_core::corpus::{self, Biterm, Corpus, Vocabulary};
use btm_core::divergence::{self, CountDistribution, FiniteMeasure, ProjectionKind};
use btm_core::metrics::{self, CostProbe};
use btm_core::model::{avg_test_loglik, Hyperparams, Snapshot};
use btm_core::online::HyperUpdate;
use btm_core::scalar::Scalar;
use btm_core::scvb0::{scvb0_responsibility, Scvb0State};
use btm_core::sdm::{sdm_responsibility, SdmBtm, SdmState, WordCountSource};
use btm_core::{synth, StepSchedule};
use log::info;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::*;

type Outcome = std::result::Result<(), Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Preprocess(a) => preprocess(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Train(a) => match a.precision {
            Precision::F64 => train::<f64>(a),
            Precision::F32 => train::<f32>(a),
        },
        Command::Eval(a) => match a.precision {
            Precision::F64 => eval::<f64>(a),
            Precision::F32 => eval::<f32>(a),
        },
        Command::Topics(a) => topics(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Bench(a) => bench(a),
        Command::Merge(a) => merge(a),
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> std::result::Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| io_failure(path, e))
}

fn create(path: &Path) -> std::result::Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| io_failure(path, e))
}

/// Attaches the file name to parse errors.
fn in_file<T>(path: &Path, r: btm_core::Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

fn read_biterms(path: &Path, vocab_size: Option<usize>) -> std::result::Result<Vec<Biterm>, Failure> {
    in_file(path, corpus::read_biterms(open(path)?, vocab_size))
}

fn read_vocab(path: &Path) -> std::result::Result<Vocabulary, Failure> {
    in_file(path, Vocabulary::read(open(path)?))
}

fn read_snapshot<F: Scalar>(path: &Path) -> std::result::Result<Snapshot<F>, Failure> {
    in_file(path, Snapshot::read(open(path)?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> btm_core::Result<()>) -> Outcome {
    let mut w = create(path)?;
    in_file(path, f(&mut w))?;
    w.flush().map_err(|e| io_failure(path, e))
}

fn write_split(out_dir: &Path, biterms: &[Biterm], ratio: f64, seed: u64) -> Outcome {
    let (train, test) = corpus::split_shuffle(biterms, ratio, seed)?;
    write_with(&out_dir.join("train.txt"), |w| corpus::write_biterms(&train, w))?;
    write_with(&out_dir.join("test.txt"), |w| corpus::write_biterms(&test, w))?;
    println!("split: {} train, {} test", train.len(), test.len());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Outcome {
    let stopwords = match &a.stopwords {
        Some(p) => in_file(p, corpus::read_stopwords(open(p)?))?,
        None => HashSet::new(),
    };
    let mut docs = Vec::new();
    for p in &a.inputs {
        for line in open(p)?.lines() {
            docs.push(line.map_err(|e| io_failure(p, e))?);
        }
    }
    info!("{} documents", docs.len());
    let corpus = Corpus::from_documents(&docs, &stopwords, a.min_freq);
    write_with(&a.out_dir.join("vocab.txt"), |w| corpus.vocab().write(w))?;
    write_with(&a.out_dir.join("biterms.txt"), |w| corpus::write_biterms(corpus.biterms(), w))?;
    write_with(&a.out_dir.join("word_counts.txt"), |w| corpus::write_word_counts(corpus.word_biterm_count(), w))?;
    println!("documents: {}, vocabulary: {}, biterms: {}", docs.len(), corpus.vocab_size(), corpus.len());
    if let Some(r) = a.split {
        write_split(&a.out_dir, corpus.biterms(), r, a.seed)?;
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Outcome {
    let (params, biterms) = synth::generate::<f64>(a.topics, a.vocab_size, a.gamma, a.beta, a.biterms, a.seed)?;
    let vocab = Vocabulary::synthetic(a.vocab_size);
    let counts = corpus::word_biterm_counts(&biterms, a.vocab_size);
    let snap = Snapshot { params, gamma: a.gamma, beta: a.beta, backend: "true".into(), processed: 0 };
    write_with(&a.out_dir.join("vocab.txt"), |w| vocab.write(w))?;
    write_with(&a.out_dir.join("biterms.txt"), |w| corpus::write_biterms(&biterms, w))?;
    write_with(&a.out_dir.join("word_counts.txt"), |w| corpus::write_word_counts(&counts, w))?;
    write_with(&a.out_dir.join("true.snapshot"), |w| snap.write(w))?;
    println!("biterms: {}", biterms.len());
    if let Some(r) = a.split {
        write_split(&a.out_dir, &biterms, r, a.seed)?;
    }
    Ok(())
}

/// `"0.1,0.5,1"` or a count `"10"`; 1 is appended when missing.
pub fn parse_checkpoints(s: &str) -> std::result::Result<Vec<f64>, Failure> {
    let bad = || Failure::new(EXIT_USAGE, format!("invalid checkpoints {s:?}"));
    let mut cps: Vec<f64> = if !s.contains(',') && !s.contains('.') {
        let n: usize = s.trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        metrics::even_checkpoints(n)
    } else {
        s.split(',').map(|t| t.trim().parse::<f64>().map_err(|_| bad())).collect::<std::result::Result<_, _>>()?
    };
    if cps.windows(2).any(|w| w[0] >= w[1]) || cps.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
        return Err(bad());
    }
    if cps.last() != Some(&1.0) {
        cps.push(1.0);
    }
    Ok(cps)
}

fn train<F: Scalar>(a: TrainArgs) -> Outcome {
    let w = match (&a.vocab, a.vocab_size) {
        (Some(p), given) => {
            let v = read_vocab(p)?.len();
            if let Some(g) = given.filter(|&g| g != v) {
                return Err(Failure::new(EXIT_DIMENSION, format!("--vocab-size {g} but {} holds {v} words", p.display())));
            }
            v
        }
        (None, Some(g)) => g,
        (None, None) => return Err(Failure::new(EXIT_USAGE, "--vocab or --vocab-size required")),
    };
    let algorithm: Algorithm = a.algo.into();
    let mut hyper = Hyperparams::defaults_for(a.topics);
    if let Some(g) = a.gamma {
        hyper.gamma = g;
    }
    hyper.beta = a.beta;
    hyper.lambda = a.lambda;
    hyper.rejuv_len = a.rejuv_len;
    hyper.tau = a.tau;
    if let Some(k) = a.kappa {
        match algorithm {
            Algorithm::Sdm => hyper.kappa_sdm = k,
            _ => hyper.kappa_scvb0 = k,
        }
    }
    hyper.seed = a.seed;
    hyper.validate()?;

    let train_set = read_biterms(&a.train, Some(w))?;
    info!("{} training biterms, W = {w}", train_set.len());
    let mut config = TrainConfig::new(algorithm, hyper.clone());
    config.sweeps = a.sweeps;
    config.slice_size = a.slice_size;
    config.inner_iters = a.inner_iters;
    config.hyper_update = match a.hyper_update {
        HyperUpdateArg::SliceEnd => HyperUpdate::SliceEnd,
        HyperUpdateArg::PerBiterm => HyperUpdate::PerBiterm,
    };
    config.resample_other = a.resample_other;
    config.streaming_counts = a.streaming_counts;
    config.corpus_size = a.corpus_size;
    config.scale_guard = !a.no_scale_guard;

    let mut trainer = Trainer::<F>::new(config, w, &train_set)?;
    match &a.test {
        Some(test_path) => {
            let test = read_biterms(test_path, Some(w))?;
            let cps = parse_checkpoints(&a.checkpoints)?;
            let records = metrics::trace_run(&mut trainer, &train_set, &test, &cps)?;
            for r in &records {
                info!("{:.2}: {:.6} ({:.0} ms)", r.fraction, r.avg_test_loglik, r.wall_ms);
            }
            if let Some(last) = records.last() {
                println!("avg_test_loglik {:.10}", last.avg_test_loglik);
            }
            if let Some(p) = &a.trace {
                write_with(p, |wr| metrics::write_trace(&records, wr))?;
            }
        }
        None => {
            if a.trace.is_some() {
                return Err(Failure::new(EXIT_USAGE, "--trace requires --test"));
            }
            trainer.feed_all(&train_set)?;
            trainer.finish()?;
        }
    }
    let snap = Snapshot {
        params: trainer.params(),
        gamma: hyper.gamma,
        beta: hyper.beta,
        backend: algorithm.name().into(),
        processed: trainer.processed(),
    };
    write_with(&a.out, |wr| snap.write(wr))
}

fn eval<F: Scalar>(a: EvalArgs) -> Outcome {
    let snap: Snapshot<F> = read_snapshot(&a.model)?;
    let test = read_biterms(&a.test, Some(snap.params.vocab_size()))?;
    let ll = avg_test_loglik(&snap.params, &test)?;
    println!("{:.17e}", ll.as_f64());
    Ok(())
}

fn topics(a: TopicsArgs) -> Outcome {
    let snap: Snapshot<f64> = read_snapshot(&a.model)?;
    let vocab = read_vocab(&a.vocab)?;
    let p = &snap.params;
    if vocab.len() != p.vocab_size() {
        return Err(Failure::new(
            EXIT_DIMENSION,
            format!("snapshot has W = {} but vocabulary holds {} words", p.vocab_size(), vocab.len()),
        ));
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for k in 0..p.topics() {
        let words: Vec<&str> = p.top_words(k, a.n).iter().map(|&(w, _)| vocab.word(w).unwrap_or("?")).collect();
        writeln!(out, "{k}\t{:.6}\t{}", p.theta()[k], words.join(" ")).map_err(|e| Failure::new(EXIT_IO, e.to_string()))?;
    }
    Ok(())
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Random `N_{w|k}` rows and `N_k` with `sum_w N_{w|k} = 2 N_k`.
fn random_statistics<R: Rng>(k: usize, w: usize, rng: &mut R) -> (Vec<f64>, Vec<Vec<f64>>) {
    let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..w).map(|_| 50.0 * rng.random::<f64>().powi(3)).collect()).collect();
    let n_k = rows.iter().map(|r| r.iter().sum::<f64>() / 2.0).collect();
    (n_k, rows)
}

fn diagnose(a: DiagnoseArgs) -> Outcome {
    let mut rng = StdRng::seed_from_u64(a.seed);
    let mut all = true;

    let mut worst = 0.0f64;
    for _ in 0..a.states {
        let k = rng.random_range(1..=8);
        let w = rng.random_range(2..=30);
        let h = Hyperparams::with_priors(k, rng.random_range(0.01..5.0), rng.random_range(0.001..1.0));
        let (n_k, rows) = random_statistics(k, w, &mut rng);
        let sc = Scvb0State::from_counts(n_k, &rows, StepSchedule::Constant(0.5), 1)?;
        let sd = SdmState::<f64>::from_expected_counts(&rows, h.beta, h.kappa_sdm)?;
        let b = Biterm::new(rng.random_range(0..w), rng.random_range(0..w));
        let x = scvb0_responsibility(&sc, &h, b);
        let y = sdm_responsibility(&sd, &h, b);
        for (p, q) in x.iter().zip(&y) {
            worst = worst.max((p - q).abs() / p.abs().max(f64::MIN_POSITIVE));
        }
    }
    let ok = worst <= 1e-12;
    all &= ok;
    println!("{} responsibility equivalence: max relative error {worst:.3e} over {} states", verdict(ok), a.states);

    let mut worst = 0.0f64;
    for _ in 0..a.laws {
        let terms: Vec<(f64, u32)> = (0..rng.random_range(1..=6)).map(|_| (rng.random::<f64>(), rng.random_range(1..=2))).collect();
        let law = CountDistribution::weighted_bernoulli_sum(&terms)?;
        for (kind, alpha) in [(ProjectionKind::A, 1.0), (ProjectionKind::B, 1.0), (ProjectionKind::C, -1.0)] {
            let prior = rng.random_range(0.05..3.0);
            let exact = divergence::local_projection_solution(&law, prior, alpha, kind)?;
            let lo = law.values()[0] + prior;
            let hi = law.values()[law.values().len() - 1] + prior;
            let grid = divergence::grid_minimize(lo, hi, 1e-4, |x| {
                divergence::local_objective(&law, prior, alpha, kind, x).unwrap_or(f64::INFINITY)
            });
            worst = worst.max((grid - exact).abs());
        }
    }
    let ok = worst <= 1e-4;
    all &= ok;
    println!("{} local projections: max |grid - closed form| {worst:.3e} over {} laws x 3 kinds", verdict(ok), a.laws);

    let (biterms, w) = match &a.biterms {
        Some(p) => {
            let b = read_biterms(p, None)?;
            let w = b.iter().map(|b| b.w2() + 1).max().unwrap_or(0);
            (b, w)
        }
        None => (synth::generate::<f64>(a.topics, 50, 1.0, 0.1, 2000, a.seed)?.1, 50),
    };
    let counts = corpus::word_biterm_counts(&biterms, w);
    let eligible: Vec<usize> = (0..w).filter(|&v| counts[v] >= 2).collect();
    if eligible.is_empty() {
        return Err(Failure::new(EXIT_INPUT, "no word occurs in two or more biterms"));
    }
    let h = Hyperparams::defaults_for(a.topics);
    let mut model = SdmBtm::<f64>::new(h.clone(), w, Some(counts), WordCountSource::Prepass, &mut rng)?;
    let (mut exact_worst, mut z_worst) = (0.0f64, 0.0f64);
    for p in 0..a.pairs {
        let take = biterms.len() * (p + 1) / a.pairs.max(1);
        let start = biterms.len() * p / a.pairs.max(1);
        for &b in &biterms[start..take] {
            model.process(b, &mut rng)?;
        }
        let word = eligible[rng.random_range(0..eligible.len())];
        let exact = divergence::martingale_noise_exhaustive(model.state(), &h, &biterms, word)?;
        exact_worst = exact.mean.iter().fold(exact_worst, |m, x| m.max(x.abs()));
        let sampled = divergence::martingale_noise_check(model.state(), &h, &biterms, word, a.samples, &mut rng)?;
        z_worst = z_worst.max(sampled.max_z());
        info!("word {word}: second moment {:.4e}", sampled.second_moment);
    }
    let ok = exact_worst <= 1e-12;
    all &= ok;
    println!("{} noise mean (exhaustive): max |mean| {exact_worst:.3e} over {} pairs", verdict(ok), a.pairs);
    let ok = z_worst < 4.0;
    all &= ok;
    println!("{} noise mean (sampled): max |mean|/stderr {z_worst:.3} with {} draws", verdict(ok), a.samples);

    let p = FiniteMeasure::new(vec![0.5, 0.5])?;
    let q = FiniteMeasure::new(vec![0.25, 0.75])?;
    let chi: f64 = divergence::alpha_divergence(&p, &q, -1.0)?;
    let ok = (chi - 0.125).abs() < 1e-15;
    all &= ok;
    println!("{} alpha = -1 special case: {chi}", verdict(ok));

    if all {
        Ok(())
    } else {
        Err(Failure::new(EXIT_NUMERIC, "one or more diagnostics failed"))
    }
}

fn bench(a: BenchArgs) -> Outcome {
    println!("algo\tK\tW\tR\tB_t\tupdate\tmemory\tmedian_ns\tstate_bytes");
    for &algo in &a.algo {
        let algorithm: Algorithm = algo.into();
        let rs: &[usize] = if algorithm == Algorithm::Ibtm { &a.rejuv_len } else { &a.rejuv_len[..1] };
        for &k in &a.topics {
            for &r in rs {
                let mut probe = CostProbe::new(k, a.vocab_size);
                probe.rejuv_len = r;
                probe.slice_size = a.slice_size;
                probe.batch = a.batch;
                probe.batches = a.batches;
                probe.seed = a.seed;
                let c = metrics::cost_accounting(algorithm, probe)?;
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.1}\t{}",
                    algorithm, k, a.vocab_size, r, a.slice_size, c.update_class, c.memory_class, c.median_ns_per_biterm, c.state_bytes
                );
            }
        }
    }
    Ok(())
}

fn merge(a: MergeArgs) -> Outcome {
    let mut records = Vec::new();
    for p in &a.traces {
        records.extend(in_file(p, metrics::read_trace(open(p)?))?);
    }
    let summary = metrics::merge_traces(&records);
    match &a.out {
        Some(p) => write_with(p, |w| metrics::write_summary(&summary, w)),
        None => metrics::write_summary(&summary, io::stdout().lock()).map_err(Failure::from),
    }
}
