use std::collections::HashSet;
use std::io::Cursor;

use btm_core::backend::{train, Algorithm, TrainConfig};
use btm_core::corpus::{read_biterms, read_word_counts, split_shuffle, write_biterms, write_word_counts};
use btm_core::metrics::{even_checkpoints, merge_traces, read_trace, trace_config, write_trace};
use btm_core::model::avg_test_loglik;
use btm_core::{synth, Corpus, Hyperparams, ModelParams, Snapshot, Vocabulary};

const DOCS: [&str; 6] = [
    "apple banana apple cherry",
    "banana cherry fruit salad",
    "goal match striker goal",
    "match referee striker penalty",
    "Apple, banana! the fruit",
    "the striker scored a goal",
];

#[test]
fn documents_to_biterms_to_files_and_back() {
    let stop: HashSet<String> = ["the", "a"].iter().map(|s| s.to_string()).collect();
    let corpus = Corpus::from_documents(&DOCS, &stop, 1);
    assert!(corpus.vocab().id("the").is_none());
    assert!(corpus.vocab().id("apple").is_some());
    // n tokens give n(n-1)/2 biterms per document
    assert_eq!(corpus.len(), 6 + 6 + 6 + 6 + 3 + 3);

    let mut buf = Vec::new();
    write_biterms(corpus.biterms(), &mut buf).unwrap();
    let back = read_biterms(Cursor::new(&buf), Some(corpus.vocab_size())).unwrap();
    assert_eq!(back, corpus.biterms());

    let mut vbuf = Vec::new();
    corpus.vocab().write(&mut vbuf).unwrap();
    let vocab = Vocabulary::read(Cursor::new(&vbuf)).unwrap();
    assert_eq!(vocab.words(), corpus.vocab().words());

    let mut cbuf = Vec::new();
    write_word_counts(corpus.word_biterm_count(), &mut cbuf).unwrap();
    assert_eq!(read_word_counts(Cursor::new(&cbuf)).unwrap(), corpus.word_biterm_count());
}

#[test]
fn out_of_range_ids_are_rejected() {
    let err = read_biterms(Cursor::new("0 1\n2 9\n"), Some(5));
    assert!(err.is_err());
}

#[test]
fn every_backend_beats_the_prior_on_two_clear_topics() {
    let stop = HashSet::new();
    let docs: Vec<String> = (0..300).map(|i| DOCS[i % 4].to_string()).collect();
    let corpus = Corpus::from_documents(&docs, &stop, 1);
    let (tr, te) = split_shuffle(corpus.biterms(), 0.8, 1).unwrap();
    let w = corpus.vocab_size();
    let prior = avg_test_loglik(&ModelParams::<f64>::prior_only(2, w), &te).unwrap();
    for algo in Algorithm::ALL {
        let mut cfg = TrainConfig::new(algo, Hyperparams::defaults_for(2));
        cfg.slice_size = 200;
        cfg.sweeps = 50;
        let p: ModelParams<f64> = train(cfg, w, &tr).unwrap();
        let ll = avg_test_loglik(&p, &te).unwrap();
        assert!(ll > prior + 0.1, "{algo}: {ll} vs prior {prior}");
    }
}

#[test]
fn snapshot_round_trip_preserves_likelihood() {
    let (truth, bs) = synth::generate::<f64>(3, 20, 1.0, 0.5, 2000, 5).unwrap();
    let snap = Snapshot { params: truth, gamma: 1.0, beta: 0.5, backend: "true".into(), processed: 0 };
    let mut buf = Vec::new();
    snap.write(&mut buf).unwrap();
    let back = Snapshot::<f64>::read(Cursor::new(&buf)).unwrap();
    let a = avg_test_loglik(&snap.params, &bs).unwrap();
    let b = avg_test_loglik(&back.params, &bs).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.abs());
    assert_eq!(back.backend, "true");
}

#[test]
fn single_precision_training_tracks_double() {
    let (_, bs) = synth::generate::<f64>(3, 30, 5.0, 0.1, 20_000, 11).unwrap();
    let (tr, te) = split_shuffle(&bs, 0.8, 2).unwrap();
    for algo in [Algorithm::Scvb0, Algorithm::Sdm] {
        let cfg = TrainConfig::new(algo, Hyperparams::defaults_for(3));
        let p64: ModelParams<f64> = train(cfg.clone(), 30, &tr).unwrap();
        let p32: ModelParams<f32> = train(cfg, 30, &tr).unwrap();
        let a = avg_test_loglik(&p64, &te).unwrap();
        let b = avg_test_loglik(&p32, &te).unwrap() as f64;
        assert!((a - b).abs() < 1e-2, "{algo}: {a} vs {b}");
    }
}

#[test]
fn traces_survive_csv_and_merge_per_checkpoint() {
    let (_, bs) = synth::generate::<f64>(2, 15, 5.0, 0.2, 3000, 3).unwrap();
    let (tr, te) = split_shuffle(&bs, 0.8, 3).unwrap();
    let mut records = Vec::new();
    for seed in 0..3 {
        let mut h = Hyperparams::defaults_for(2);
        h.seed = seed;
        records.extend(trace_config::<f64>(TrainConfig::new(Algorithm::Sdm, h), 15, &tr, &te, &even_checkpoints(4)).unwrap());
    }
    assert_eq!(records.len(), 12);
    let mut buf = Vec::new();
    write_trace(&records, &mut buf).unwrap();
    let header = String::from_utf8(buf.clone()).unwrap();
    assert!(header.starts_with("backend,seed,fraction,avg_test_loglik,wall_ms,rss_bytes"));
    let back = read_trace(Cursor::new(&buf)).unwrap();
    assert_eq!(back.len(), records.len());
    let summary = merge_traces(&back);
    assert_eq!(summary.len(), 4);
    assert!(summary.iter().all(|s| s.runs == 3 && s.std_loglik >= 0.0));
}
