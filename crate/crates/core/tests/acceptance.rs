//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line to
//! stdout (uncaptured) and then asserts the verdict. Tests hold a shared
//! lock so timing measurements never overlap.

use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use btm_core::backend::{Algorithm, TrainConfig, Trainer};
use btm_core::cgs::{exact_posterior_oracle, total_variation, GibbsSampler};
use btm_core::corpus::{split_shuffle, word_biterm_counts, Biterm};
use btm_core::divergence::{
    local_projection_solution, martingale_noise_check, martingale_noise_exhaustive, CountDistribution, ProjectionKind,
};
use btm_core::incremental::IncrementalBtm;
use btm_core::metrics::{cost_accounting, even_checkpoints, mean_std, merge_traces, trace_config, CostProbe};
use btm_core::model::{avg_test_loglik, CountState, Hyperparams, ModelParams};
use btm_core::online::{process_slice, HyperUpdate, OnlineHyperState};
use btm_core::schedule::{power_tail_bounds, prefix_sums};
use btm_core::scvb0::{scvb0_responsibility, scvb0_step, Scvb0State};
use btm_core::sdm::{sdm_process_biterm, sdm_responsibility, SdmState};
use btm_core::{synth, StepSchedule};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "[{id}] {verdict} {name}: {detail}");
    let _ = out.flush();
    assert!(ok, "[{id}] {name}: {detail}");
}

fn note(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "      {line}");
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// The synthetic recovery corpus, split 4:1.
fn recovery_corpus() -> (ModelParams<f64>, Vec<Biterm>, Vec<Biterm>) {
    let (truth, biterms) = synth::generate::<f64>(5, 100, 10.0, 0.1, 200_000, 2024).unwrap();
    let (train, test) = split_shuffle(&biterms, 0.8, 7).unwrap();
    (truth, train, test)
}

#[test]
fn c1_gibbs_marginals_match_exact_enumeration() {
    let _g = lock();
    let start = Instant::now();
    let hyper = Hyperparams::with_priors(2, 0.5, 0.1);
    let biterms = vec![Biterm::new(0, 1), Biterm::new(1, 2), Biterm::new(0, 1), Biterm::new(2, 3)];
    let oracle = exact_posterior_oracle(&biterms, 4, &hyper).unwrap();
    assert_eq!(oracle.probabilities().len(), 16);

    let mut rng = StdRng::seed_from_u64(1);
    let mut sampler = GibbsSampler::new(hyper, 4, biterms.clone(), &mut rng).unwrap();
    sampler.run(2000, &mut rng).unwrap();
    let sweeps = 200_000;
    let mut hits = vec![[0u64; 2]; biterms.len()];
    for _ in 0..sweeps {
        sampler.sweep(&mut rng).unwrap();
        for (h, &z) in hits.iter_mut().zip(sampler.assignments()) {
            h[z] += 1;
        }
    }
    let mut worst = 0.0f64;
    for (i, h) in hits.iter().enumerate() {
        let empirical: Vec<f64> = h.iter().map(|&c| c as f64 / sweeps as f64).collect();
        worst = worst.max(total_variation(&empirical, &oracle.marginal(i)));
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "gibbs marginals vs exact enumeration",
        worst < 0.05 && secs < 60.0,
        &format!("max per-biterm TV {worst:.5} (< 0.05), {secs:.2} s (< 60 s)"),
    );
}

#[test]
fn c2_sdm_and_scvb0_responsibilities_coincide() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let k = rng.random_range(1..=10);
        let w = rng.random_range(2..=40);
        let hyper = Hyperparams::with_priors(k, rng.random_range(0.01..10.0), rng.random_range(0.001..1.0));
        let rows: Vec<Vec<f64>> =
            (0..k).map(|_| (0..w).map(|_| 100.0 * rng.random::<f64>().powi(4)).collect()).collect();
        let n_k: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>() / 2.0).collect();
        let sc = Scvb0State::from_counts(n_k, &rows, StepSchedule::Constant(0.5), 1).unwrap();
        let sd = SdmState::<f64>::from_expected_counts(&rows, hyper.beta, hyper.kappa_sdm).unwrap();
        let b = Biterm::new(rng.random_range(0..w), rng.random_range(0..w));
        let x = scvb0_responsibility(&sc, &hyper, b);
        let y = sdm_responsibility(&sd, &hyper, b);
        for (p, q) in x.iter().zip(&y) {
            worst = worst.max((p - q).abs() / p.abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "sdm vs scvb0 responsibilities",
        worst <= 1e-12 && secs < 5.0,
        &format!("max relative error {worst:.3e} (<= 1e-12) over 10^4 states, {secs:.2} s (< 5 s)"),
    );
}

/// `D_alpha[p||q]` for positive measures, written out directly.
fn oracle_divergence(p: &[f64], q: &[f64], alpha: f64) -> f64 {
    if alpha == 1.0 {
        return p.iter().zip(q).map(|(&a, &b)| a * (a / b).ln() - a + b).sum();
    }
    let s: f64 = p.iter().zip(q).map(|(&a, &b)| alpha * a + (1.0 - alpha) * b - a.powf(alpha) * b.powf(1.0 - alpha)).sum();
    s / (alpha * (1.0 - alpha))
}

#[test]
fn c3_local_projections_match_grid_search() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(3);
    let step = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let terms: Vec<(f64, u32)> =
            (0..rng.random_range(1..=6)).map(|_| (rng.random::<f64>(), rng.random_range(1..=2))).collect();
        let law = CountDistribution::weighted_bernoulli_sum(&terms).unwrap();
        let (ns, ps) = (law.values(), law.probs());
        for (kind, alpha) in [(ProjectionKind::A, 1.0), (ProjectionKind::B, 1.0), (ProjectionKind::C, -1.0)] {
            let prior = rng.random_range(0.05..3.0);
            let exact = local_projection_solution(&law, prior, alpha, kind).unwrap();
            // target factor per configuration and the candidate's factor
            let (target, factor): (Vec<f64>, fn(f64) -> f64) = match kind {
                ProjectionKind::C => (ns.iter().map(|n| 1.0 / (n + prior)).collect(), |x| 1.0 / x),
                _ => (ns.iter().map(|n| n + prior).collect(), |x| x),
            };
            let p: Vec<f64> = target.iter().zip(ps).map(|(t, pr)| t * pr).collect();
            let lo = ns[0] + prior;
            let hi = ns[ns.len() - 1] + prior;
            let n = ((hi - lo) / step).ceil() as usize;
            let mut best = (lo, f64::INFINITY);
            for i in 0..=n {
                let x = (lo + i as f64 * step).min(hi);
                let q: Vec<f64> = ps.iter().map(|pr| pr * factor(x)).collect();
                let d = oracle_divergence(&p, &q, alpha);
                if d < best.1 {
                    best = (x, d);
                }
            }
            worst = worst.max((best.0 - exact).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        3,
        "local projections vs grid search",
        worst <= step && secs < 30.0,
        &format!("max |grid - closed form| {worst:.2e} (<= 1e-4) over 100 laws x kinds a, b, c; {secs:.2} s (< 30 s)"),
    );
}

#[test]
fn c4_noise_term_is_a_martingale_difference() {
    let _g = lock();
    let mut rng = StdRng::seed_from_u64(4);
    let (mut exact_worst, mut z_worst) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let k = rng.random_range(2..=6);
        let w = rng.random_range(5..=30);
        let hyper = Hyperparams::with_priors(k, rng.random_range(0.1..5.0), rng.random_range(0.01..0.5));
        let n = rng.random_range(50..=300);
        let biterms: Vec<Biterm> = (0..n).map(|_| Biterm::new(rng.random_range(0..w), rng.random_range(0..w))).collect();
        let counts = word_biterm_counts(&biterms, w);
        let mut state = SdmState::<f64>::random_init(k, w, hyper.beta, hyper.kappa_sdm, &mut rng).unwrap();
        for &b in &biterms[..rng.random_range(0..n)] {
            sdm_process_biterm(&mut state, &hyper, b, &counts).unwrap();
        }
        let eligible: Vec<usize> = (0..w).filter(|&v| counts[v] >= 2).collect();
        let word = eligible[rng.random_range(0..eligible.len())];
        let exact = martingale_noise_exhaustive(&state, &hyper, &biterms, word).unwrap();
        exact_worst = exact.mean.iter().fold(exact_worst, |m, x| m.max(x.abs()));
        let sampled = martingale_noise_check(&state, &hyper, &biterms, word, 100_000, &mut rng).unwrap();
        z_worst = z_worst.max(sampled.max_z());
    }
    report(
        4,
        "noise term mean",
        exact_worst <= 1e-12 && z_worst < 4.0,
        &format!("exhaustive max |mean| {exact_worst:.2e} (<= 1e-12); sampled max |mean|/stderr {z_worst:.3} (< 4) over 20 pairs"),
    );
}

#[test]
fn c5_all_backends_recover_synthetic_topics() {
    let _g = lock();
    let (truth, train, test) = recovery_corpus();
    let reference = avg_test_loglik(&truth, &test).unwrap();
    note(&format!("true-parameter avg test log-likelihood {reference:.6}"));
    let mut ok = true;
    let mut parts = Vec::new();
    for algo in Algorithm::ALL {
        let config = TrainConfig::new(algo, Hyperparams::defaults_for(5));
        let start = Instant::now();
        let mut t = Trainer::<f64>::new(config, 100, &train).unwrap();
        t.feed_all(&train).unwrap();
        t.finish().unwrap();
        let secs = start.elapsed().as_secs_f64();
        let ll = avg_test_loglik(&t.params(), &test).unwrap();
        let gap = (ll - reference).abs() / reference.abs();
        let fast = !matches!(algo, Algorithm::Sdm | Algorithm::Scvb0) || secs < 60.0;
        ok &= gap <= 0.05 && fast;
        note(&format!("{algo:>5}: {ll:.6}, relative gap {:.3}%, {secs:.2} s", 100.0 * gap));
        parts.push(format!("{algo} {:.2}%", 100.0 * gap));
    }
    report(5, "synthetic recovery within 5%", ok, &parts.join(", "));
}

#[test]
fn c6_streaming_comparison_traces() {
    let _g = lock();
    let (_, train, test) = recovery_corpus();
    let checkpoints = even_checkpoints(10);
    let mut records = Vec::new();
    for algo in Algorithm::STREAMING {
        for seed in 0..10 {
            let mut hyper = Hyperparams::defaults_for(5);
            hyper.seed = seed;
            records.extend(trace_config::<f64>(TrainConfig::new(algo, hyper), 100, &train, &test, &checkpoints).unwrap());
        }
    }
    let summary = merge_traces(&records);
    for s in &summary {
        note(&format!("{:>5} {:.1}: {:.6} ± {:.6} (n = {})", s.backend, s.fraction, s.mean_loglik, s.std_loglik, s.runs));
    }
    let final_of = |name: &str| {
        let ll: Vec<f64> = records.iter().filter(|r| r.backend == name && r.fraction == 1.0).map(|r| r.avg_test_loglik).collect();
        assert_eq!(ll.len(), 10);
        mean_std(&ll)
    };
    let (sdm, sdm_sd) = final_of("sdm");
    let (scvb0, scvb0_sd) = final_of("scvb0");
    report(
        6,
        "sdm final mean >= scvb0 final mean - 1 sd",
        sdm >= scvb0 - scvb0_sd,
        &format!("sdm {sdm:.6} ± {sdm_sd:.6}, scvb0 {scvb0:.6} ± {scvb0_sd:.6}"),
    );
}

#[test]
fn c7_scale_guard_prevents_underflow() {
    let _g = lock();
    let (k, w) = (3, 8);
    let hyper = Hyperparams::with_priors(k, 1.0, 0.1);
    let rho0: f64 = StepSchedule::scvb0(1000.0, 0.8).unwrap().rho(0);
    let schedule = StepSchedule::Constant(rho0);
    let stream: Vec<Biterm> = (0..w).flat_map(|a| (a..w).map(move |b| Biterm::new(a, b))).collect();
    let mut rng = StdRng::seed_from_u64(7);
    let mut guarded = Scvb0State::<f64>::random_init(k, w, schedule, 1000, &mut rng);
    let mut unguarded = guarded.clone();
    unguarded.guard = false;

    let steps: u64 = 100_000_000;
    let start = Instant::now();
    let mut healthy = true;
    for t in 0..steps {
        let b = stream[(t % stream.len() as u64) as usize];
        scvb0_step(&mut guarded, &hyper, b).unwrap();
        if t % 10_000_000 == 0 {
            healthy &= (0..w).all(|v| (0..k).all(|j| guarded.n_wk(v, j).is_finite() && guarded.n_wk(v, j) > 0.0));
        }
    }
    healthy &= (0..w).all(|v| (0..k).all(|j| guarded.n_wk(v, j).is_finite() && guarded.n_wk(v, j) > 0.0));
    let secs = start.elapsed().as_secs_f64();

    // IEEE underflow: scale leaves the normal range. Under round-to-nearest
    // with rho < 1/2 it then stalls at the smallest subnormal, and the next
    // write overflows the dummy entries.
    let mut underflow_at = None;
    let mut step_error = None;
    for t in 0..1_000_000u64 {
        let b = stream[(t % stream.len() as u64) as usize];
        if let Err(e) = scvb0_step(&mut unguarded, &hyper, b) {
            step_error = Some(e.to_string());
            break;
        }
        if underflow_at.is_none() && unguarded.scale() < f64::MIN_POSITIVE {
            underflow_at = Some(t + 1);
        }
        if underflow_at.is_some_and(|u| t + 1 >= u + 10_000) {
            break;
        }
    }
    let broken = step_error.is_some() || (0..w).any(|v| (0..k).any(|j| !(unguarded.n_wk(v, j).is_finite() && unguarded.n_wk(v, j) > 0.0)));
    report(
        7,
        "scale guard",
        healthy && underflow_at.is_some() && broken,
        &format!(
            "guarded: 10^8 steps at rho {rho0:.4e}, all N_wk finite and positive = {healthy}, {} folds, {secs:.1} s; \
             unguarded: scale below f64::MIN_POSITIVE after {underflow_at:?} steps, final scale {:e}, logical N_wk broken = {broken}{}",
            guarded.renormalizations(),
            unguarded.scale(),
            step_error.map(|e| format!(" ({e})")).unwrap_or_default(),
        ),
    );
}

#[test]
fn c8_invariants() {
    let _g = lock();
    let mut rng = StdRng::seed_from_u64(8);
    let (k, w) = (4, 30);
    let hyper = Hyperparams::defaults_for(k);
    let stream: Vec<Biterm> = (0..3000).map(|_| Biterm::new(rng.random_range(0..w), rng.random_range(0..w))).collect();
    let mut failures = Vec::new();

    let conserved = |c: &CountState, n: u64| {
        c.check_invariants().is_ok()
            && c.total() == n
            && (0..c.topics()).all(|j| c.n_dot_k(j) == 2 * c.n_k(j))
    };
    let mut sampler = GibbsSampler::new(hyper.clone(), w, stream.clone(), &mut rng).unwrap();
    let mut ok = conserved(sampler.state(), stream.len() as u64);
    for _ in 0..20 {
        sampler.sweep(&mut rng).unwrap();
        ok &= conserved(sampler.state(), stream.len() as u64);
    }
    let mut ib = IncrementalBtm::new(hyper.clone(), w).unwrap();
    for (i, &b) in stream.iter().enumerate() {
        ib.process(b, &mut rng).unwrap();
        ok &= conserved(ib.counts(), i as u64 + 1);
    }
    let mut hs = OnlineHyperState::symmetric(k, w, hyper.gamma, hyper.beta);
    for slice in stream.chunks(500) {
        let (_, counts) = process_slice::<f64, _>(&mut hs, slice, 3, 1.0, HyperUpdate::SliceEnd, &mut rng).unwrap();
        ok &= conserved(&counts, slice.len() as u64);
    }
    if !ok {
        failures.push("count conservation");
    }

    let mut norm = 0.0f64;
    for algo in Algorithm::ALL {
        let mut config = TrainConfig::new(algo, hyper.clone());
        config.sweeps = 10;
        config.slice_size = 700;
        let p: ModelParams<f64> = btm_core::backend::train(config, w, &stream).unwrap();
        norm = norm.max(p.normalization_error());
    }
    if norm > 1e-12 {
        failures.push("simplex normalization");
    }

    let counts = word_biterm_counts(&stream, w);
    let mut sdm = SdmState::<f64>::random_init(k, w, hyper.beta, hyper.kappa_sdm, &mut rng).unwrap();
    sdm.recompute_every = None;
    while sdm.updates() < 1_000_000 {
        let b = stream[rng.random_range(0..stream.len())];
        sdm_process_biterm(&mut sdm, &hyper, b, &counts).unwrap();
    }
    let drift = sdm.c_drift();
    if drift >= 1e-9 {
        failures.push("c drift");
    }

    let mut rm = true;
    let mut rm_notes = Vec::new();
    for (schedule, offset, kappa) in [
        (StepSchedule::sdm(0.51).unwrap(), 1.0, 0.51),
        (StepSchedule::scvb0(1000.0, 0.8).unwrap(), 1000.0, 0.8),
    ] {
        let (s1_a, s2_a) = prefix_sums(&schedule, 100_000);
        let (s1_b, s2_b) = prefix_sums(&schedule, 1_000_000);
        // sum of rho grows at least like the integral of (x + offset)^-kappa
        let integral = ((1_000_000.0 + offset) as f64).powf(1.0 - kappa) - (100_000.0 + offset as f64).powf(1.0 - kappa);
        rm &= s1_b - s1_a >= integral / (1.0 - kappa);
        // sum of rho^2 is bounded: prefix plus tail bracket a finite limit
        let (lo_a, hi_a) = power_tail_bounds(offset, 2.0 * kappa, 100_000);
        let (lo_b, hi_b) = power_tail_bounds(offset, 2.0 * kappa, 1_000_000);
        let bracket_a = (s2_a + lo_a, s2_a + hi_a);
        let bracket_b = (s2_b + lo_b, s2_b + hi_b);
        rm &= bracket_b.0 <= bracket_a.1 && bracket_a.0 <= bracket_b.1 && hi_a.is_finite();
        rm_notes.push(format!("kappa {kappa}: sum rho {s1_b:.1}, sum rho^2 in [{:.6}, {:.6}]", bracket_b.0, bracket_b.1));
    }
    if !rm {
        failures.push("robbins-monro");
    }

    report(
        8,
        "invariants",
        failures.is_empty(),
        &format!(
            "conservation ok = {ok}, max normalization error {norm:.1e}, c drift {drift:.2e} after 10^6 updates, {}; failing: {failures:?}",
            rm_notes.join("; ")
        ),
    );
}

#[test]
fn c9_cost_scaling() {
    let _g = lock();
    let measure = |algo, k, r| {
        let mut p = CostProbe::new(k, 2000);
        p.rejuv_len = r;
        p.batch = 5000;
        p.batches = 21;
        p.warmup = 5000;
        cost_accounting(algo, p).unwrap().median_ns_per_biterm
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for algo in [Algorithm::Sdm, Algorithm::Scvb0] {
        let ratio = measure(algo, 128, 10) / measure(algo, 64, 10);
        ok &= (1.5..=3.0).contains(&ratio);
        parts.push(format!("{algo} K 64->128 x{ratio:.2}"));
    }
    let ratio = measure(Algorithm::Ibtm, 32, 20) / measure(Algorithm::Ibtm, 32, 10);
    ok &= (1.5..=3.0).contains(&ratio);
    parts.push(format!("ibtm R 10->20 x{ratio:.2}"));

    let mut rng = StdRng::seed_from_u64(9);
    let big: Vec<Biterm> = (0..1_000_000).map(|_| Biterm::new(rng.random_range(0..2000), rng.random_range(0..2000))).collect();
    for algo in [Algorithm::Scvb0, Algorithm::Sdm] {
        let bytes = |n: usize| {
            let mut t = Trainer::<f64>::new(TrainConfig::new(algo, Hyperparams::defaults_for(64)), 2000, &big[..n]).unwrap();
            t.feed_all(&big[..n]).unwrap();
            t.heap_bytes() as f64
        };
        let ratio = bytes(1_000_000) / bytes(100_000);
        ok &= ratio < 1.1;
        parts.push(format!("{algo} state N_B 1e5->1e6 x{ratio:.3}"));
    }
    report(9, "cost scaling", ok, &parts.join(", "));
}
