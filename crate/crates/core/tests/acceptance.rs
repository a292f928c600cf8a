//! Acceptance suite. Runs every criterion in order and prints one
//! PASS/FAIL line per criterion; exits nonzero if any fails.
//!
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Beta, Distribution};

use diln::batch::{
    e_step, topic_usage, topic_word_stats, train_batch, train_batch_from, update_alpha, update_eta,
    BatchTrainConfig, InitOptions, TrainOutput,
};
use diln::corpus::{split_heldout, Corpus, Document};
use diln::eval::{approx_predictive, evaluate_corpus, EvalConfig};
use diln::generative::{
    conditional_moments, generate_corpus, marginal_moments, normalizer_bound,
    normalizer_partial_sums, sample_group_at, sample_group_with, sample_top_level, stick_breaking,
    GroundTruth, KernelConfig, SyntheticConfig, TopLevelDraw,
};
use diln::mat::{dot, norm, Mat};
use diln::model::{DocumentState, GlobalState, Mode, ModelConfig};
use diln::rng::stream_rng;
use diln::special::ln_gamma;
use diln::stochastic::{
    initial_state, scaled_topic_stats, stochastic_step, train_stochastic_from, StepSchedule,
    StochasticConfig, UpdateSelection,
};
use diln::vb::{fit_document, update_z, FitConfig, FitContext};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Shared artefacts of criteria 9 and 10.
#[derive(Default)]
struct Shared {
    recovery: Option<RecoveryData>,
}

struct RecoveryData {
    train: Corpus,
    test: Corpus,
    truth: GroundTruth,
    diln: TrainOutput,
    diln_secs: f64,
}

// ---------------------------------------------------------------- 1

fn sample_stats(xs: &[f64], ys: &[f64]) -> [(f64, f64); 3] {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let var = dx.iter().map(|d| d * d).sum::<f64>() / n;
    let cov = dx.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>() / n;
    let se_mean = (var / n).sqrt();
    let se_var = (dx.iter().map(|d| (d * d - var).powi(2)).sum::<f64>() / n / n).sqrt();
    let se_cov = (dx
        .iter()
        .zip(&dy)
        .map(|(a, b)| (a * b - cov).powi(2))
        .sum::<f64>()
        / n
        / n)
        .sqrt();
    [(mx, se_mean), (var, se_var), (cov, se_cov)]
}

fn within(stats: &[(f64, f64); 3], m: &diln::generative::Moments) -> bool {
    let target = [m.mean_i, m.var_i, m.cov_ij];
    stats
        .iter()
        .zip(target)
        .all(|(&(est, se), t)| (est - t).abs() <= 3.0 * se)
}

fn criterion_1(_: &mut Shared) -> Outcome {
    const N: usize = 100_000;
    const T: usize = 5;
    let (i, j) = (1, 0);
    let mut rng = stream_rng(2024, 1);
    let mut passed = 0;
    let mut notes = Vec::new();
    for setting in 0..10u64 {
        let alpha = rng.random_range(0.5..5.0);
        let beta = rng.random_range(0.5..5.0);
        let d = if setting % 2 == 0 { 2 } else { 5 };
        let c = rng.random_range(0.02..0.2);
        let kernel = KernelConfig::new(d, c).unwrap();
        let top = sample_top_level(alpha, 1.0, kernel, T, 2, 500 + setting).unwrap();
        let k = top.gram();

        // conditional on the top level
        let mut r = stream_rng(600 + setting, 0);
        let (mut zi, mut zj) = (Vec::with_capacity(N), Vec::with_capacity(N));
        for _ in 0..N {
            let g = sample_group_with(&mut r, &top, beta).unwrap();
            zi.push(g.z[i]);
            zj.push(g.z[j]);
        }
        let cond = conditional_moments(beta, &top.weights, &k, i, j).unwrap();
        let ok_cond = within(&sample_stats(&zi, &zj), &cond);

        // sticks integrated out, locations held fixed
        let sticks = Beta::new(1.0, alpha).unwrap();
        zi.clear();
        zj.clear();
        for _ in 0..N {
            let mut v: Vec<f64> = (0..T).map(|_| sticks.sample(&mut r)).collect();
            v[T - 1] = 1.0;
            let draw = TopLevelDraw {
                weights: stick_breaking(&v).unwrap(),
                sticks: v,
                topics: top.topics.clone(),
                locations: top.locations.clone(),
            };
            let u: Vec<f64> = (0..d)
                .map(|_| r.sample(rand_distr::StandardNormal))
                .collect();
            let g = sample_group_at(&mut r, &draw, beta, u).unwrap();
            zi.push(g.z[i]);
            zj.push(g.z[j]);
        }
        let marg = marginal_moments(alpha, beta, &k, i, j).unwrap();
        let ok_marg = within(&sample_stats(&zi, &zj), &marg);
        if ok_cond && ok_marg {
            passed += 1;
        } else {
            notes.push(format!("setting {setting} cond={ok_cond} marg={ok_marg}"));
        }
    }
    outcome(
        passed >= 9,
        format!("{passed}/10 settings within 3 SE on mean, variance and covariance {notes:?}"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2(_: &mut Shared) -> Outcome {
    let kernel = KernelConfig::new(20, 1.0 / 20.0).unwrap();
    let beta = 1.0;
    let bound = normalizer_bound(beta, kernel).unwrap();
    let est = normalizer_partial_sums(100.0, beta, kernel, &[10, 50, 200], 10_000, 77).unwrap();
    let means: Vec<f64> = est.iter().map(|e| e.mean).collect();
    let monotone = means.windows(2).all(|w| w[1] >= w[0]);
    let below = means.iter().all(|&m| m <= bound);
    outcome(
        monotone && below,
        format!("E[S_T] for T=10,50,200: {means:.4?}, bound {bound:.4}"),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3(_: &mut Shared) -> Outcome {
    let mut rng = stream_rng(33, 0);
    let (mut worst_g, mut worst_h): (f64, f64) = (0.0, 0.0);
    for inst_id in 0..20u64 {
        let t = rng.random_range(2..=8);
        let d = rng.random_range(1..=3);
        let m = rng.random_range(1..=5);
        let v = rng.random_range(3..=10);
        let inst = common::random_instance(1000 + inst_id, t, v, d, m, Mode::Diln);
        let r = common::gradient_check(&inst);
        worst_g = worst_g.max(r.worst_gradient());
        worst_h = worst_h.max(r.stick_hessian);
    }
    outcome(
        worst_g < 1e-4 && worst_h < 1e-3,
        format!("worst relative error: gradients {worst_g:.2e}, stick Hessian {worst_h:.2e}"),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4(_: &mut Shared) -> Outcome {
    let (corpus, _) = generate_corpus(&SyntheticConfig {
        n_docs: 50,
        vocab_size: 100,
        n_topics: 8,
        latent_dim: 3,
        location_var: 0.3,
        mean_doc_len: 60.0,
        seed: 4,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let cfg = BatchTrainConfig {
        model: ModelConfig {
            truncation: 20,
            latent_dim: 3,
            location_var: 0.3,
            gamma0: 0.1,
            ..ModelConfig::default()
        },
        rel_tol: 1e-15,
        max_iters: 30,
        seed: 4,
        ..BatchTrainConfig::default()
    };
    let out = train_batch(&corpus, &cfg).unwrap();
    let b = out.trace.bounds();
    let worst = b
        .windows(2)
        .map(|w| (w[0] - w[1]) / w[0].abs())
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        b.len() == 30 && worst <= 1e-6,
        format!(
            "{} iterations, bound {:.3} -> {:.3}, largest relative drop {worst:.2e}",
            b.len(),
            b[0],
            b[b.len() - 1]
        ),
    )
}

// ---------------------------------------------------------------- 5

fn perturb_locations(global: &mut GlobalState, states: &mut [DocumentState], seed: u64) {
    let mut rng = stream_rng(seed, 5);
    for x in global.ell.as_mut_slice() {
        *x = rng.random_range(-50.0..50.0);
    }
    for s in states {
        for u in &mut s.u {
            *u = rng.random_range(-50.0..50.0);
        }
    }
}

fn criterion_5(_: &mut Shared) -> Outcome {
    let (corpus, _) = generate_corpus(&SyntheticConfig {
        n_docs: 60,
        vocab_size: 50,
        n_topics: 4,
        latent_dim: 3,
        mean_doc_len: 40.0,
        seed: 55,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let model = ModelConfig {
        truncation: 10,
        latent_dim: 3,
        gamma0: 0.2,
        mode: Mode::Hdp,
        ..ModelConfig::default()
    };
    let cfg = BatchTrainConfig {
        model: model.clone(),
        rel_tol: 1e-12,
        max_iters: 8,
        seed: 1,
        ..BatchTrainConfig::default()
    };
    let docs: Vec<&Document> = corpus.docs().iter().collect();
    let init = diln::batch::init_topics(&corpus, &model, &InitOptions::default(), 1).unwrap();
    let states = e_step(&docs, &init, &cfg.fit, None);
    let mut init2 = init.clone();
    let mut states2 = states.clone();
    perturb_locations(&mut init2, &mut states2, 9);

    let a = train_batch_from(&corpus, &cfg, init.clone(), Some(states)).unwrap();
    let b = train_batch_from(&corpus, &cfg, init2.clone(), Some(states2)).unwrap();
    let same_global = |x: &GlobalState, y: &GlobalState| {
        x.gamma == y.gamma
            && x.sticks == y.sticks
            && x.alpha.to_bits() == y.alpha.to_bits()
            && x.beta == y.beta
    };
    let same_docs = a
        .states
        .iter()
        .zip(&b.states)
        .all(|(x, y)| x.phi == y.phi && x.a == y.a && x.b == y.b && x.xi == y.xi);
    let batch_same =
        a.trace.records == b.trace.records && same_global(&a.global, &b.global) && same_docs;

    let scfg = StochasticConfig {
        model: model.clone(),
        batch_size: 15,
        epochs: 2,
        seed: 3,
        eval_every: None,
        ..StochasticConfig::default()
    };
    let sa = train_stochastic_from(&corpus, &scfg, init.clone(), None).unwrap();
    let sb = train_stochastic_from(&corpus, &scfg, init2, None).unwrap();
    let stoch_same = sa.trace.records == sb.trace.records && same_global(&sa.global, &sb.global);
    outcome(
        batch_same && stoch_same,
        format!(
            "batch trace ({} records) identical: {batch_same}; stochastic trace ({} records) identical: {stoch_same}",
            a.trace.records.len(),
            sa.trace.records.len()
        ),
    )
}

// ---------------------------------------------------------------- 6

fn criterion_6(_: &mut Shared) -> Outcome {
    let (corpus, _) = generate_corpus(&SyntheticConfig {
        n_docs: 80,
        vocab_size: 60,
        n_topics: 5,
        latent_dim: 2,
        mean_doc_len: 30.0,
        seed: 66,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let model = ModelConfig {
        truncation: 12,
        latent_dim: 2,
        gamma0: 0.1,
        ..ModelConfig::default()
    };
    let global = diln::batch::init_topics(&corpus, &model, &InitOptions::default(), 6).unwrap();
    let docs: Vec<&Document> = corpus.docs().iter().collect();
    let states = e_step(&docs, &global, &FitConfig::default(), None);

    let mut batch = global.clone();
    let stats = topic_word_stats(&docs, &states, batch.n_topics(), batch.vocab_size());
    update_eta(&mut batch, &stats, model.gamma0).unwrap();
    update_alpha(&mut batch, model.tau1, model.tau2);

    let mut stoch = global.clone();
    stochastic_step(
        &mut stoch,
        &docs,
        &states,
        docs.len(),
        &model,
        1.0,
        UpdateSelection::closed_form_only(),
    );
    let bits_equal = batch
        .gamma
        .as_slice()
        .iter()
        .zip(stoch.gamma.as_slice())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let alpha_equal = batch.alpha.to_bits() == stoch.alpha.to_bits();
    outcome(
        bits_equal && alpha_equal && batch == stoch,
        format!(
            "{} topic entries bit-identical: {bits_equal}; alpha identical: {alpha_equal}",
            batch.gamma.as_slice().len()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7(_: &mut Shared) -> Outcome {
    let (corpus, _) = generate_corpus(&SyntheticConfig {
        n_docs: 6,
        vocab_size: 12,
        n_topics: 3,
        latent_dim: 2,
        mean_doc_len: 20.0,
        seed: 7,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let model = ModelConfig {
        truncation: 4,
        latent_dim: 2,
        ..ModelConfig::default()
    };
    let global = diln::batch::init_topics(&corpus, &model, &InitOptions::default(), 7).unwrap();
    let docs: Vec<&Document> = corpus.docs().iter().collect();
    let states = e_step(&docs, &global, &FitConfig::default(), None);
    let (t, v) = (global.n_topics(), global.vocab_size());
    let full = topic_word_stats(&docs, &states, t, v);
    let mut avg = Mat::zeros(t, v);
    let mut count = 0;
    for a in 0..6 {
        for b in a + 1..6 {
            let bd = [docs[a], docs[b]];
            let bs = [states[a].clone(), states[b].clone()];
            let s = scaled_topic_stats(&bd, &bs, t, v, 3.0);
            for (x, y) in avg.as_mut_slice().iter_mut().zip(s.as_slice()) {
                *x += y;
            }
            count += 1;
        }
    }
    let worst = avg
        .as_slice()
        .iter()
        .zip(full.as_slice())
        .map(|(a, f)| (a / count as f64 - f).abs())
        .fold(0.0, f64::max);
    outcome(
        count == 15 && worst <= 1e-12,
        format!("{count} minibatches, largest deviation from the full statistic {worst:.2e}"),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8(_: &mut Shared) -> Outcome {
    let mut failures = 0;
    let mut smallest_drop = f64::INFINITY;
    for id in 0..50u64 {
        let mode = if id % 5 == 4 { Mode::Hdp } else { Mode::Diln };
        let mut inst = common::random_instance(8000 + id, 2 + (id as usize % 5), 7, 2, 2, mode);
        let ctx_global = inst.global.clone();
        let ctx = FitContext::new(&ctx_global);
        for (doc, st) in inst.docs.iter().zip(inst.states.iter_mut()) {
            update_z(doc, st, &ctx);
        }
        let base = inst.bound();
        let k = id as usize % inst.global.n_topics();
        for which in 0..2 {
            for factor in [0.99, 1.01] {
                let mut states = inst.states.clone();
                let target = if which == 0 {
                    &mut states[0].a
                } else {
                    &mut states[0].b
                };
                target[k] *= factor;
                let drop = base - inst.bound_with(&inst.global, &states);
                smallest_drop = smallest_drop.min(drop);
                if !(drop > 0.0) {
                    failures += 1;
                }
            }
        }
    }
    outcome(
        failures == 0,
        format!("200 perturbations, {failures} failed to lower the bound, smallest decrease {smallest_drop:.2e}"),
    )
}

// ---------------------------------------------------------------- 9 / 10

fn recovery_corpus() -> (Corpus, Corpus, GroundTruth) {
    let (corpus, truth) = generate_corpus(&SyntheticConfig::default()).unwrap();
    let (train, test) = split_heldout(&corpus, 400, 10).unwrap();
    (train, test, truth)
}

fn recovery_config(mode: Mode) -> BatchTrainConfig {
    BatchTrainConfig {
        model: ModelConfig {
            truncation: 40,
            latent_dim: 5,
            location_var: 0.05,
            gamma0: 0.05,
            mode,
            ..ModelConfig::default()
        },
        rel_tol: 1e-5,
        max_iters: 400,
        seed: 9,
        ..BatchTrainConfig::default()
    }
}

fn normalized_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.iter_rows()
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|x| x / s).collect()
        })
        .collect()
}

/// Greedy one-to-one matching by descending cosine; returns the cosine and
/// learned index of each true topic's match.
fn greedy_match(truth: &[Vec<f64>], learned: &[Vec<f64>]) -> Vec<(f64, usize)> {
    let mut pairs = Vec::new();
    for (i, a) in truth.iter().enumerate() {
        for (j, b) in learned.iter().enumerate() {
            pairs.push((dot(a, b) / (norm(a) * norm(b)), i, j));
        }
    }
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let mut out = vec![(f64::NAN, 0); truth.len()];
    let mut used = vec![false; learned.len()];
    for (c, i, j) in pairs {
        if out[i].0.is_nan() && !used[j] {
            out[i] = (c, j);
            used[j] = true;
        }
    }
    out
}

fn shared_recovery(shared: &mut Shared) -> &RecoveryData {
    if shared.recovery.is_none() {
        let (train, test, truth) = recovery_corpus();
        let start = Instant::now();
        let diln = train_batch(&train, &recovery_config(Mode::Diln)).unwrap();
        shared.recovery = Some(RecoveryData {
            train,
            test,
            truth,
            diln,
            diln_secs: start.elapsed().as_secs_f64(),
        });
    }
    shared.recovery.as_ref().unwrap()
}

fn criterion_9(shared: &mut Shared) -> Outcome {
    let data = shared_recovery(shared);
    let truth = normalized_rows(&data.truth.top.topics);
    let learned = normalized_rows(&data.diln.global.gamma);
    let matches = greedy_match(&truth, &learned);
    let min_cos = matches.iter().map(|m| m.0).fold(f64::INFINITY, f64::min);
    let usage = topic_usage(data.train.docs(), &data.diln.states);
    let total: f64 = usage.iter().sum();
    // topics left over after matching
    let trailing: Vec<f64> = (0..usage.len())
        .filter(|j| !matches.iter().any(|m| m.1 == *j))
        .map(|j| usage[j] / total)
        .collect();
    let trailing_max = trailing.iter().copied().fold(0.0, f64::max);
    let trailing_total: f64 = trailing.iter().sum();
    outcome(
        min_cos > 0.9 && trailing_max < 0.01,
        format!(
            "min matched cosine {min_cos:.4}; unmatched topics: largest share {:.3}%, combined {:.3}%; {} iterations in {:.0} s",
            100.0 * trailing_max,
            100.0 * trailing_total,
            data.diln.trace.records.len(),
            data.diln_secs
        ),
    )
}

/// Batch training in blocks of `block` iterations, keeping the state with the
/// best validation perplexity; stops after two blocks without improvement or
/// on convergence.
fn train_validated(
    train: &Corpus,
    valid: &Corpus,
    cfg: &BatchTrainConfig,
    block: usize,
) -> (GlobalState, usize, f64) {
    let eval = EvalConfig {
        n_samples: 200,
        seed: 1010,
        ..EvalConfig::default()
    };
    let block_cfg = BatchTrainConfig {
        max_iters: block,
        ..cfg.clone()
    };
    let mut global = diln::batch::init_topics(train, &cfg.model, &cfg.init, cfg.seed).unwrap();
    let mut states = None;
    let mut best = (global.clone(), 0, f64::INFINITY);
    let (mut done, mut stale) = (0, 0);
    while done < cfg.max_iters && stale < 2 {
        let out = train_batch_from(train, &block_cfg, global, states).unwrap();
        done += out.trace.records.len();
        let p = evaluate_corpus(valid, &out.global, &eval)
            .unwrap()
            .perplexity;
        if p < best.2 {
            best = (out.global.clone(), done, p);
            stale = 0;
        } else {
            stale += 1;
        }
        let converged = out.trace.records.len() < block;
        global = out.global;
        states = Some(out.states);
        if converged {
            break;
        }
    }
    best
}

fn criterion_10(shared: &mut Shared) -> Outcome {
    let data = shared_recovery(shared);
    let (fit, valid) = split_heldout(&data.train, 200, 1010).unwrap();
    let eval = EvalConfig {
        seed: 10,
        ..EvalConfig::default()
    };
    let mut results = Vec::new();
    for mode in [Mode::Diln, Mode::Hdp] {
        let (global, iters, _) = train_validated(&fit, &valid, &recovery_config(mode), 10);
        let p = evaluate_corpus(&data.test, &global, &eval)
            .unwrap()
            .perplexity;
        results.push((p, iters));
    }
    let (p_diln, p_hdp) = (results[0].0, results[1].0);
    let v = data.train.vocab_size() as f64;
    outcome(
        p_diln <= p_hdp * 1.01 && p_diln < v && p_hdp < v,
        format!(
            "perplexity DILN {p_diln:.3} ({} iterations), HDP {p_hdp:.3} ({} iterations), uniform {v}; stopping chosen on 200 validation documents",
            results[0].1, results[1].1
        ),
    )
}

// ---------------------------------------------------------------- 11

fn criterion_11(_: &mut Shared) -> Outcome {
    let (corpus, _) = generate_corpus(&SyntheticConfig {
        n_docs: 5000,
        seed: 11,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let (train, test) = split_heldout(&corpus, 500, 11).unwrap();
    let model = ModelConfig {
        truncation: 40,
        latent_dim: 5,
        location_var: 0.05,
        gamma0: 0.05,
        ..ModelConfig::default()
    };
    let eval = EvalConfig {
        seed: 11,
        n_samples: 500,
        ..EvalConfig::default()
    };

    let t0 = Instant::now();
    let batch_cfg = BatchTrainConfig {
        model: model.clone(),
        rel_tol: 1e-5,
        max_iters: 400,
        seed: 11,
        ..BatchTrainConfig::default()
    };
    let batch = train_batch(&train, &batch_cfg).unwrap();
    let batch_secs = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let stoch_cfg = StochasticConfig {
        model,
        schedule: StepSchedule::new(25.0, 0.75).unwrap(),
        batch_size: 250,
        epochs: 1,
        seed: 11,
        init_docs: Some(1000),
        eval_every: None,
        ..StochasticConfig::default()
    };
    let init = initial_state(&train, &stoch_cfg).unwrap();
    let stoch = train_stochastic_from(&train, &stoch_cfg, init, None).unwrap();
    let stoch_secs = t1.elapsed().as_secs_f64();

    let p_batch = evaluate_corpus(&test, &batch.global, &eval)
        .unwrap()
        .perplexity;
    let p_stoch = evaluate_corpus(&test, &stoch.global, &eval)
        .unwrap()
        .perplexity;
    let gap = p_stoch / p_batch - 1.0;
    outcome(
        gap <= 0.05 && stoch_secs < batch_secs,
        format!(
            "perplexity stochastic {p_stoch:.3} vs batch {p_batch:.3} ({:+.2}%); time {stoch_secs:.0} s vs {batch_secs:.0} s ({} batch iterations, {} minibatches)",
            100.0 * gap,
            batch.trace.records.len(),
            stoch.trace.records.len()
        ),
    )
}

// ---------------------------------------------------------------- 12

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut q0, mut q1) = (1.0, z);
                for k in 2..=n {
                    let q2 = ((2 * k - 1) as f64 * z * q1 - (k - 1) as f64 * q0) / k as f64;
                    q0 = q1;
                    q1 = q2;
                }
                let dq = n as f64 * (z * q1 - q0) / (z * z - 1.0);
                x[i] = z;
                w[i] = 2.0 / ((1.0 - z * z) * dq * dq);
                break;
            }
        }
    }
    // map to [0, 1]
    (
        x.iter().map(|z| 0.5 * (z + 1.0)).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}

fn ln_beta_density(x: f64, a: f64, b: f64) -> f64 {
    ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()
}

/// Exact `p(second | Q)` for a two-word, two-topic model by quadrature over
/// the normalized weight and both topics' first-word probabilities.
fn quadrature_predictive(state: &DocumentState, gamma: &Mat, second: &Document) -> f64 {
    let (nodes, weights) = gauss_legendre(80);
    let (a1, a2, b1, b2) = (state.a[0], state.a[1], state.b[0], state.b[1]);
    let ln_g = |g: f64| {
        (a1 - 1.0) * g.ln() + (a2 - 1.0) * (1.0 - g).ln()
            - (a1 + a2) * (b1 * g + b2 * (1.0 - g)).ln()
    };
    let g_norm: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&g, &w)| w * ln_g(g).exp())
        .sum();
    let mut counts = [0u32; 2];
    for &(w, c) in second.entries() {
        counts[w] = c;
    }
    let mut total = 0.0;
    for (&g, &wg) in nodes.iter().zip(&weights) {
        let dg = ln_g(g).exp() / g_norm;
        for (&t1, &w1) in nodes.iter().zip(&weights) {
            let d1 = ln_beta_density(t1, gamma.get(0, 0), gamma.get(0, 1)).exp();
            for (&t2, &w2) in nodes.iter().zip(&weights) {
                let d2 = ln_beta_density(t2, gamma.get(1, 0), gamma.get(1, 1)).exp();
                let p0 = g * t1 + (1.0 - g) * t2;
                let lik = p0.powi(counts[0] as i32) * (1.0 - p0).powi(counts[1] as i32);
                total += wg * w1 * w2 * dg * d1 * d2 * lik;
            }
        }
    }
    total
}

fn criterion_12(_: &mut Shared) -> Outcome {
    let global = GlobalState {
        gamma: Mat::from_rows(&[vec![6.0, 2.5], vec![2.0, 5.0]]),
        sticks: vec![0.6, 1.0],
        ell: Mat::from_rows(&[vec![0.3, -0.2], vec![-0.4, 0.1]]),
        alpha: 1.0,
        beta: 10.0,
        mode: Mode::Diln,
    };
    let fit = FitConfig::default();
    let first = Document::new(vec![(0, 3), (1, 2)]).unwrap();
    let second = Document::new(vec![(0, 2), (1, 3)]).unwrap();
    let est = approx_predictive(&first, &second, &global, &fit, 10_000, 12).unwrap();
    let state = fit_document(&first, &global, &fit).unwrap();
    let exact = quadrature_predictive(&state, &global.gamma, &second);
    let z = ((est.log_prob - exact.ln()).exp() - 1.0).abs() / est.std_err;

    // standard-error scaling on a larger model, averaged over documents
    let inst = common::random_instance(1212, 6, 20, 2, 4, Mode::Diln);
    let sizes = [100usize, 1000, 10_000];
    let mut ln_se = [0.0; 3];
    for (slot, &s) in sizes.iter().enumerate() {
        let mut acc = 0.0;
        for (m, doc) in inst.docs.iter().enumerate() {
            let (a, b) = diln::corpus::split_document_halves(doc, m as u64).unwrap();
            let e = approx_predictive(&a, &b, &inst.global, &fit, s, 100 + slot as u64).unwrap();
            acc += e.std_err;
        }
        ln_se[slot] = (acc / inst.docs.len() as f64).ln();
    }
    let xs: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();
    let mx = xs.iter().sum::<f64>() / 3.0;
    let my = ln_se.iter().sum::<f64>() / 3.0;
    let slope = xs
        .iter()
        .zip(&ln_se)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    outcome(
        z <= 3.0 && (slope + 0.5).abs() <= 0.1,
        format!(
            "micro-model |estimate − quadrature| = {z:.2} std_err (est {:.6}, exact {:.6}); std_err slope {slope:.3}",
            est.log_prob.exp(),
            exact
        ),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    type Criterion = fn(&mut Shared) -> Outcome;
    let criteria: [(usize, &str, Criterion, u64); 12] = [
        (1, "moment oracle", criterion_1, 120),
        (2, "normalizer finiteness", criterion_2, 60),
        (3, "gradient suite", criterion_3, 60),
        (4, "bound monotonicity", criterion_4, 120),
        (5, "HDP switch", criterion_5, 60),
        (6, "stochastic degeneracy", criterion_6, 60),
        (7, "minibatch unbiasedness", criterion_7, 10),
        (8, "gamma factor optimality", criterion_8, 30),
        (9, "synthetic recovery", criterion_9, 15 * 60),
        (10, "directional perplexity", criterion_10, 20 * 60),
        (11, "stochastic vs batch", criterion_11, 30 * 60),
        (12, "evaluator convergence", criterion_12, 120),
    ];
    let mut failed = Vec::new();
    let mut shared = Shared::default();
    for (id, name, run, budget) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = run(&mut shared);
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = out.pass && in_time;
        println!(
            "criterion {id:>2} [{}] {name}: {} ({:.1} s of {budget} s)",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
