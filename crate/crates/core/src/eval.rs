//! Held-out evaluation by document completion.
//!
//! Each test document is split into halves; the first half is fitted with the
//! global state fixed and the second half is scored under Monte-Carlo draws
//! from the fitted factors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_document_halves, Corpus, Document};
use crate::error::{Error, Result};
use crate::model::{DocumentState, GlobalState};
use crate::rng::stream_rng;
use crate::special::{log_sum_exp, sample_ln_gamma};
use crate::vb::{fit_document, FitConfig};

pub const DEFAULT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveEstimate {
    /// Estimate of `ln p(second half | first half)`.
    pub log_prob: f64,
    pub n_words: u64,
    pub n_samples: usize,
    /// Relative standard error of the estimate of `p` (the standard error of
    /// `log_prob` to first order).
    pub std_err: f64,
}

/// Monte-Carlo estimate of the completion likelihood of `target` given a
/// fitted first-half `state`.
pub fn predictive_from_state(
    target: &Document,
    state: &DocumentState,
    global: &GlobalState,
    n_samples: usize,
    seed: u64,
    stream: u64,
) -> Result<PredictiveEstimate> {
    if n_samples == 0 {
        return Err(Error::Validation("n_samples must be >= 1".into()));
    }
    let t = global.n_topics();
    let words = target.entries();
    let floor = words.iter().map(|&(_, c)| c as f64).sum::<f64>() * f64::MIN_POSITIVE.ln();
    let totals: Vec<f64> = global.gamma.iter_rows().map(|r| r.iter().sum()).collect();
    let needed: Vec<f64> = (0..t)
        .map(|k| words.iter().map(|&(w, _)| global.gamma.get(k, w)).sum())
        .collect();
    let mut rng = stream_rng(seed, stream);
    let mut ln_g = vec![0.0; t];
    // ln η_k(w) for the target words, word-major
    let mut ln_eta = vec![0.0; words.len() * t];
    let mut parts = Vec::with_capacity(words.len() + 1);
    let mut mix = vec![0.0; t];
    let mut samples = Vec::with_capacity(n_samples);
    let mut guarded = false;
    for _ in 0..n_samples {
        for k in 0..t {
            ln_g[k] = sample_ln_gamma(&mut rng, state.a[k], state.b[k]);
        }
        let norm = log_sum_exp(&ln_g);
        ln_g.iter_mut().for_each(|g| *g -= norm);
        for k in 0..t {
            parts.clear();
            for &(w, _) in words {
                parts.push(sample_ln_gamma(&mut rng, global.gamma.get(k, w), 1.0));
            }
            let rest = totals[k] - needed[k];
            if rest > 0.0 {
                parts.push(sample_ln_gamma(&mut rng, rest, 1.0));
            }
            let ln_total = log_sum_exp(&parts);
            for i in 0..words.len() {
                ln_eta[i * t + k] = parts[i] - ln_total;
            }
        }
        let mut lp = 0.0;
        for (i, &(_, c)) in words.iter().enumerate() {
            for k in 0..t {
                mix[k] = ln_g[k] + ln_eta[i * t + k];
            }
            lp += c as f64 * log_sum_exp(&mix);
        }
        if !(lp >= floor) {
            guarded = true;
            lp = floor;
        }
        samples.push(lp);
    }
    if guarded {
        log::warn!("predictive likelihood underflowed; clamped to the representable floor");
    }
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = samples.iter().map(|s| (s - max).exp()).collect();
    let s = n_samples as f64;
    let mean = w.iter().sum::<f64>() / s;
    let std_err = if n_samples > 1 {
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (s - 1.0);
        var.sqrt() / (s.sqrt() * mean)
    } else {
        0.0
    };
    Ok(PredictiveEstimate {
        log_prob: max + mean.ln(),
        n_words: target.n_tokens() as u64,
        n_samples,
        std_err,
    })
}

/// Fits `first_half` under the fixed global state and estimates the
/// predictive probability of `second_half`.
pub fn approx_predictive(
    first_half: &Document,
    second_half: &Document,
    global: &GlobalState,
    fit: &FitConfig,
    n_samples: usize,
    seed: u64,
) -> Result<PredictiveEstimate> {
    if first_half.n_tokens() == 0 {
        return Err(Error::Validation(
            "first half of the document is empty".into(),
        ));
    }
    if second_half
        .entries()
        .iter()
        .any(|&(w, _)| w >= global.vocab_size())
    {
        return Err(Error::Validation(
            "held-out word outside the model vocabulary".into(),
        ));
    }
    let state = fit_document(first_half, global, fit)?;
    predictive_from_state(second_half, &state, global, n_samples, seed, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Pooling {
    /// `exp(−Σ ln p / Σ N)` over the whole test set.
    #[default]
    Corpus,
    /// Mean of per-document perplexities.
    PerDocument,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corpus" => Ok(Pooling::Corpus),
            "document" | "per-document" => Ok(Pooling::PerDocument),
            other => Err(Error::config(
                "pooling",
                format!("expected corpus|document, got `{other}`"),
            )),
        }
    }
}

pub fn perplexity(estimates: &[PredictiveEstimate]) -> Result<f64> {
    perplexity_pooled(estimates, Pooling::Corpus)
}

pub fn perplexity_pooled(estimates: &[PredictiveEstimate], pooling: Pooling) -> Result<f64> {
    let words: u64 = estimates.iter().map(|e| e.n_words).sum();
    if words == 0 || estimates.iter().any(|e| e.n_words == 0) && pooling == Pooling::PerDocument {
        return Err(Error::Validation("perplexity needs held-out words".into()));
    }
    Ok(match pooling {
        Pooling::Corpus => {
            (-estimates.iter().map(|e| e.log_prob).sum::<f64>() / words as f64).exp()
        }
        Pooling::PerDocument => {
            estimates
                .iter()
                .map(|e| (-e.log_prob / e.n_words as f64).exp())
                .sum::<f64>()
                / estimates.len() as f64
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub fit: FitConfig,
    pub n_samples: usize,
    pub seed: u64,
    pub pooling: Pooling,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            pooling: Pooling::Corpus,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentEval {
    pub index: usize,
    pub estimate: PredictiveEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: Vec<DocumentEval>,
    pub perplexity: f64,
}

impl EvalReport {
    /// Tab-separated per-document lines followed by the pooled perplexity.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("doc\tlog_prob\tn_words\tstd_err\n");
        for d in &self.documents {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                d.index, d.estimate.log_prob, d.estimate.n_words, d.estimate.std_err
            ));
        }
        out.push_str(&format!("# perplexity\t{}\n", self.perplexity));
        out
    }
}

/// Splits every test document into halves (documents under two tokens are
/// skipped) and scores the second halves.
pub fn evaluate_corpus(
    test: &Corpus,
    global: &GlobalState,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    if test.vocab_size() > global.vocab_size() {
        return Err(Error::Validation(format!(
            "test vocabulary ({}) larger than the model's ({})",
            test.vocab_size(),
            global.vocab_size()
        )));
    }
    let documents: Vec<DocumentEval> = test
        .docs()
        .par_iter()
        .enumerate()
        .filter_map(|(i, doc)| {
            let (first, second) = split_document_halves(doc, cfg.seed.wrapping_add(i as u64))?;
            Some((i, first, second))
        })
        .map(|(i, first, second)| -> Result<DocumentEval> {
            let state = fit_document(&first, global, &cfg.fit)?;
            let estimate =
                predictive_from_state(&second, &state, global, cfg.n_samples, cfg.seed, i as u64)?;
            Ok(DocumentEval { index: i, estimate })
        })
        .collect::<Result<_>>()?;
    if documents.is_empty() {
        return Err(Error::Validation(
            "no test document has two or more tokens".into(),
        ));
    }
    let estimates: Vec<PredictiveEstimate> = documents.iter().map(|d| d.estimate).collect();
    let perplexity = perplexity_pooled(&estimates, cfg.pooling)?;
    Ok(EvalReport {
        documents,
        perplexity,
    })
}
