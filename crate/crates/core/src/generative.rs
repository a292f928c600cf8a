//! Sampling from the normalized-gamma construction and its prior moments.
//!
//! The top level is a truncated stick-breaking draw whose atoms carry a topic
//! `η_k ~ Dirichlet(γ₀)` and a latent location `ℓ_k ~ Normal(0, cI_d)`. Each
//! group draws `u ~ Normal(0, I_d)` and unnormalized weights
//! `Z_k ~ Gamma(βp_k, rate = exp(−ℓ_kᵀu))`; normalizing gives the group's
//! topic proportions. Forcing `u = 0` recovers the HDP group draw.

use rand::Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::rng::stream_rng;
use crate::special::{log_sum_exp, sample_ln_gamma};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub dim: usize,
    pub variance: f64,
}

impl KernelConfig {
    pub fn new(dim: usize, variance: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("latent dimension must be >= 1".into()));
        }
        if !(variance > 0.0) {
            return Err(Error::Domain(format!(
                "location variance must be > 0, got {variance}"
            )));
        }
        if variance >= 1.0 {
            log::warn!(
                "location variance c={variance} >= 1: the normalizer may have infinite mean"
            );
        }
        Ok(Self { dim, variance })
    }
}

/// Maps sticks `V` (with `V_T = 1`) to weights `p_k = V_k Π_{j<k}(1 − V_j)`.
pub fn stick_breaking(sticks: &[f64]) -> Result<Vec<f64>> {
    if sticks.is_empty() {
        return Err(Error::Domain("at least one stick required".into()));
    }
    if let Some(v) = sticks.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::Domain(format!("stick {v} outside (0, 1]")));
    }
    if *sticks.last().unwrap() != 1.0 {
        return Err(Error::Domain("last stick must equal 1".into()));
    }
    Ok(stick_weights(sticks))
}

/// Unchecked stick-breaking; the caller guarantees the domain.
pub(crate) fn stick_weights(sticks: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    sticks
        .iter()
        .map(|&v| {
            let p = v * rest;
            rest *= 1.0 - v;
            p
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopLevelDraw {
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    /// T × V topic distributions.
    pub topics: Mat,
    /// T × d topic locations.
    pub locations: Mat,
}

impl TopLevelDraw {
    pub fn n_atoms(&self) -> usize {
        self.weights.len()
    }

    /// Gram matrix `K_ij = ℓ_iᵀℓ_j`.
    pub fn gram(&self) -> Mat {
        gram(&self.locations)
    }
}

pub fn gram(locations: &Mat) -> Mat {
    let t = locations.rows();
    let mut k = Mat::zeros(t, t);
    for i in 0..t {
        for j in 0..t {
            k.set(i, j, dot(locations.row(i), locations.row(j)));
        }
    }
    k
}

fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}

fn sample_sticks<R: Rng>(rng: &mut R, alpha: f64, truncation: usize) -> Vec<f64> {
    let beta = Beta::new(1.0, alpha).expect("alpha > 0");
    let mut sticks: Vec<f64> = (0..truncation.saturating_sub(1))
        .map(|_| {
            let v: f64 = beta.sample(rng);
            v.clamp(f64::MIN_POSITIVE, 1.0)
        })
        .collect();
    sticks.push(1.0);
    sticks
}

fn sample_dirichlet_symmetric<R: Rng>(rng: &mut R, conc: f64, size: usize) -> Vec<f64> {
    let mut ln: Vec<f64> = (0..size).map(|_| sample_ln_gamma(rng, conc, 1.0)).collect();
    let z = log_sum_exp(&ln);
    for x in ln.iter_mut() {
        *x = (*x - z).exp();
    }
    ln
}

pub fn sample_top_level_with<R: Rng>(
    rng: &mut R,
    alpha: f64,
    gamma0: f64,
    kernel: KernelConfig,
    truncation: usize,
    vocab_size: usize,
) -> Result<TopLevelDraw> {
    check_positive("alpha", alpha)?;
    check_positive("gamma0", gamma0)?;
    if truncation == 0 || vocab_size == 0 {
        return Err(Error::Domain(
            "truncation and vocabulary size must be >= 1".into(),
        ));
    }
    let sticks = sample_sticks(rng, alpha, truncation);
    let weights = stick_weights(&sticks);
    let mut topics = Mat::zeros(truncation, vocab_size);
    for k in 0..truncation {
        let row = sample_dirichlet_symmetric(rng, gamma0, vocab_size);
        topics.row_mut(k).copy_from_slice(&row);
    }
    let sd = kernel.variance.sqrt();
    let mut locations = Mat::zeros(truncation, kernel.dim);
    for x in locations.as_mut_slice() {
        let n: f64 = rng.sample(StandardNormal);
        *x = sd * n;
    }
    Ok(TopLevelDraw {
        sticks,
        weights,
        topics,
        locations,
    })
}

pub fn sample_top_level(
    alpha: f64,
    gamma0: f64,
    kernel: KernelConfig,
    truncation: usize,
    vocab_size: usize,
    seed: u64,
) -> Result<TopLevelDraw> {
    sample_top_level_with(
        &mut stream_rng(seed, 0),
        alpha,
        gamma0,
        kernel,
        truncation,
        vocab_size,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupDraw {
    pub location: Vec<f64>,
    /// GP values `W_k = ℓ_kᵀu`.
    pub gp: Vec<f64>,
    pub ln_z: Vec<f64>,
    pub z: Vec<f64>,
    pub proportions: Vec<f64>,
}

/// Group draw at a fixed group location `u`.
pub fn sample_group_at<R: Rng>(
    rng: &mut R,
    top: &TopLevelDraw,
    beta: f64,
    location: Vec<f64>,
) -> Result<GroupDraw> {
    check_positive("beta", beta)?;
    let gp: Vec<f64> = top
        .locations
        .iter_rows()
        .map(|l| dot(l, &location))
        .collect();
    let ln_z: Vec<f64> = top
        .weights
        .iter()
        .zip(&gp)
        .map(|(&p, &w)| sample_ln_gamma(rng, beta * p, (-w).exp()))
        .collect();
    let norm = log_sum_exp(&ln_z);
    let proportions = ln_z.iter().map(|x| (x - norm).exp()).collect();
    let z = ln_z.iter().map(|x| x.exp()).collect();
    Ok(GroupDraw {
        location,
        gp,
        ln_z,
        z,
        proportions,
    })
}

pub fn sample_group_with<R: Rng>(rng: &mut R, top: &TopLevelDraw, beta: f64) -> Result<GroupDraw> {
    let u: Vec<f64> = (0..top.locations.cols())
        .map(|_| rng.sample(StandardNormal))
        .collect();
    sample_group_at(rng, top, beta, u)
}

pub fn sample_group(top: &TopLevelDraw, beta: f64, seed: u64) -> Result<GroupDraw> {
    sample_group_with(&mut stream_rng(seed, 1), top, beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean_i: f64,
    pub var_i: f64,
    pub cov_ij: f64,
}

fn check_gram(k: &Mat, i: usize, j: usize) -> Result<()> {
    let n = k.rows();
    if k.cols() != n {
        return Err(Error::Domain("kernel matrix must be square".into()));
    }
    if i >= n || j >= n {
        return Err(Error::Domain(format!(
            "indices ({i}, {j}) out of range for {n} atoms"
        )));
    }
    for a in 0..n {
        for b in 0..a {
            let (x, y) = (k.get(a, b), k.get(b, a));
            if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                return Err(Error::Domain(format!(
                    "kernel matrix asymmetric at ({a}, {b})"
                )));
            }
        }
    }
    Ok(())
}

/// Moments of `Z_i` and `Cov(Z_i, Z_j)` given the sticks' weights `p` and
/// the Gram matrix, with the GP integrated out. Indices are zero-based.
pub fn conditional_moments(beta: f64, p: &[f64], k: &Mat, i: usize, j: usize) -> Result<Moments> {
    check_positive("beta", beta)?;
    check_gram(k, i, j)?;
    let (kii, kjj, kij) = (k.get(i, i), k.get(j, j), k.get(i, j));
    let mean_i = beta * p[i] * (0.5 * kii).exp();
    let var_i =
        beta * p[i] * (2.0 * kii).exp() + beta * beta * p[i] * p[i] * kii.exp() * (kii.exp() - 1.0);
    let cov_ij = if i == j {
        var_i
    } else {
        beta * beta * p[i] * p[j] * (0.5 * (kii + kjj)).exp() * (kij.exp() - 1.0)
    };
    Ok(Moments {
        mean_i,
        var_i,
        cov_ij,
    })
}

/// `E[p_i]` under Beta(1, α) sticks (zero-based `i`).
pub fn expected_weight(alpha: f64, i: usize) -> f64 {
    let n = i as f64 + 1.0;
    alpha.powf(n - 1.0) / (1.0 + alpha).powf(n)
}

/// `E[p_i²]` (zero-based `i`).
pub fn expected_weight_sq(alpha: f64, i: usize) -> f64 {
    let n = i as f64 + 1.0;
    2.0 * alpha.powf(n - 1.0) / ((1.0 + alpha) * (2.0 + alpha).powf(n))
}

/// `E[p_i p_j]` for `i ≠ j` (zero-based, either order).
pub fn expected_weight_cross(alpha: f64, i: usize, j: usize) -> f64 {
    let (hi, lo) = if i > j { (i, j) } else { (j, i) };
    let (hi, lo) = (hi as f64 + 1.0, lo as f64 + 1.0);
    alpha.powf(hi - 1.0) / ((2.0 + alpha).powf(lo) * (1.0 + alpha).powf(hi - lo + 1.0))
}

/// Moments with the top-level sticks integrated out as well.
pub fn marginal_moments(alpha: f64, beta: f64, k: &Mat, i: usize, j: usize) -> Result<Moments> {
    check_positive("alpha", alpha)?;
    check_positive("beta", beta)?;
    check_gram(k, i, j)?;
    let (kii, kjj, kij) = (k.get(i, i), k.get(j, j), k.get(i, j));
    let ep_i = expected_weight(alpha, i);
    let mean_i = beta * ep_i * (0.5 * kii).exp();
    let var_i = beta * ep_i * (2.0 * kii).exp()
        + beta * beta * expected_weight_sq(alpha, i) * (2.0 * kii).exp()
        - beta * beta * ep_i * ep_i * kii.exp();
    let cov_ij = if i == j {
        var_i
    } else {
        let half = 0.5 * (kii + kjj);
        beta * beta * expected_weight_cross(alpha, i, j) * (half + kij).exp()
            - beta * beta * ep_i * expected_weight(alpha, j) * half.exp()
    };
    Ok(Moments {
        mean_i,
        var_i,
        cov_ij,
    })
}

/// Upper bound `β(1 − c)^{−d/2}` on the mean of `S = Σ_k Z_k e^{W_k}`.
pub fn normalizer_bound(beta: f64, kernel: KernelConfig) -> Result<f64> {
    check_positive("beta", beta)?;
    if kernel.variance >= 1.0 {
        return Err(Error::Domain(format!(
            "normalizer bound undefined for c = {} >= 1",
            kernel.variance
        )));
    }
    Ok(beta * (1.0 - kernel.variance).powf(-(kernel.dim as f64) / 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialSumEstimate {
    pub truncation: usize,
    pub mean: f64,
    pub std_err: f64,
}

/// Monte-Carlo means of the partial normalizers `S_T = Σ_{i≤T} Y_i e^{ℓ_iᵀu}`
/// with `Y_i ~ Gamma(βp_i, 1)` and untruncated Beta(1, α) sticks.
///
/// Each replicate draws fresh sticks, locations and `u`, and the partial sums
/// for all requested `T` are nested within a replicate.
pub fn normalizer_partial_sums(
    alpha: f64,
    beta: f64,
    kernel: KernelConfig,
    truncations: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<Vec<PartialSumEstimate>> {
    check_positive("alpha", alpha)?;
    check_positive("beta", beta)?;
    let t_max = truncations.iter().copied().max().unwrap_or(0);
    let stick = Beta::new(1.0, alpha).expect("alpha > 0");
    let loc = Normal::new(0.0, kernel.variance.sqrt()).expect("c > 0");
    let mut sums = vec![0.0; truncations.len()];
    let mut sq = vec![0.0; truncations.len()];
    for r in 0..replicates {
        let mut rng = stream_rng(seed, r as u64);
        let u: Vec<f64> = (0..kernel.dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let mut rest = 1.0;
        let mut partial = 0.0;
        let mut partials = Vec::with_capacity(t_max);
        for _ in 0..t_max {
            let v: f64 = stick.sample(&mut rng);
            let p = v * rest;
            rest *= 1.0 - v;
            let w: f64 = (0..kernel.dim).map(|a| loc.sample(&mut rng) * u[a]).sum();
            let shape = beta * p;
            if shape > 0.0 {
                partial += (sample_ln_gamma(&mut rng, shape, 1.0) + w).exp();
            }
            partials.push(partial);
        }
        for (slot, &t) in truncations.iter().enumerate() {
            let s = if t == 0 { 0.0 } else { partials[t - 1] };
            sums[slot] += s;
            sq[slot] += s * s;
        }
    }
    let n = replicates as f64;
    Ok(truncations
        .iter()
        .enumerate()
        .map(|(slot, &t)| {
            let mean = sums[slot] / n;
            let var = (sq[slot] / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
            PartialSumEstimate {
                truncation: t,
                mean,
                std_err: (var / n).sqrt(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_docs: usize,
    pub vocab_size: usize,
    pub n_topics: usize,
    pub latent_dim: usize,
    pub location_var: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma0: f64,
    pub mean_doc_len: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_docs: 2000,
            vocab_size: 200,
            n_topics: 10,
            latent_dim: 5,
            location_var: 0.5,
            alpha: 5.0,
            beta: 5.0,
            gamma0: 0.05,
            mean_doc_len: 100.0,
            seed: 1,
        }
    }
}

/// Ground truth behind a synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub config: SyntheticConfig,
    pub top: TopLevelDraw,
    pub doc_locations: Vec<Vec<f64>>,
    pub doc_proportions: Vec<Vec<f64>>,
}

/// Draws a corpus from the generative model; document lengths are
/// `1 + Poisson(mean_doc_len − 1)`.
pub fn generate_corpus(cfg: &SyntheticConfig) -> Result<(Corpus, GroundTruth)> {
    let kernel = KernelConfig::new(cfg.latent_dim, cfg.location_var)?;
    check_positive("mean_doc_len", cfg.mean_doc_len)?;
    let top = sample_top_level(
        cfg.alpha,
        cfg.gamma0,
        kernel,
        cfg.n_topics,
        cfg.vocab_size,
        cfg.seed,
    )?;
    let cdfs: Vec<Vec<f64>> = top.topics.iter_rows().map(cumulative).collect();
    let len_dist = if cfg.mean_doc_len > 1.0 {
        Some(Poisson::new(cfg.mean_doc_len - 1.0).expect("positive rate"))
    } else {
        None
    };
    let mut docs = Vec::with_capacity(cfg.n_docs);
    let mut doc_locations = Vec::with_capacity(cfg.n_docs);
    let mut doc_proportions = Vec::with_capacity(cfg.n_docs);
    for m in 0..cfg.n_docs {
        let mut rng = stream_rng(cfg.seed, 1 + m as u64);
        let group = sample_group_with(&mut rng, &top, cfg.beta)?;
        let n = 1 + len_dist.map_or(0, |d| d.sample(&mut rng) as usize);
        let topic_cdf = cumulative(&group.proportions);
        let tokens: Vec<usize> = (0..n)
            .map(|_| {
                let k = draw(&topic_cdf, rng.random());
                draw(&cdfs[k], rng.random())
            })
            .collect();
        docs.push(Document::from_tokens(&tokens).expect("n >= 1"));
        doc_locations.push(group.location);
        doc_proportions.push(group.proportions);
    }
    let corpus = Corpus::new(Vocabulary::synthetic(cfg.vocab_size), docs)?;
    Ok((
        corpus,
        GroundTruth {
            config: cfg.clone(),
            top,
            doc_locations,
            doc_proportions,
        },
    ))
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

fn draw(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf.last().copied().unwrap_or(1.0);
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}
