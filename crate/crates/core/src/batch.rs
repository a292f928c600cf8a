//! Corpus-level coordinate updates and the batch trainer.
//!
//! Every update here either maximizes its block of the surrogate bound in
//! closed form (topics, α̂) or is a gradient/Newton step accepted only when
//! the bound does not decrease (sticks, topic locations, β̂).

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::generative::stick_weights;
use crate::linalg::damped_solve;
use crate::mat::{dot, Mat};
use crate::model::{DocumentState, GlobalState, Mode, ModelConfig, DOT_CLAMP};
use crate::rng::stream_rng;
use crate::special::{digamma, ln_gamma, trigamma};
use crate::vb::{
    compute_bound_scaled, fit_document_from, init_document, FitConfig, FitContext, Priors,
};

pub const STICK_MIN: f64 = 1e-6;
pub const STICK_MAX: f64 = 1.0 - 1e-6;
const MAX_HALVINGS: usize = 10;

/// Document-level quantities the corpus-level updates read, with the
/// weight each document carries (1 in batch mode, `M/|B|` for a minibatch).
#[derive(Debug, Clone)]
pub struct Evidence {
    pub elog_z: Mat,
    pub ez: Mat,
    pub u: Mat,
    pub scale: f64,
}

impl Evidence {
    pub fn from_states(states: &[DocumentState], scale: f64) -> Self {
        let t = states.first().map_or(0, |s| s.n_topics());
        let d = states.first().map_or(0, |s| s.u.len());
        let mut elog_z = Mat::zeros(states.len(), t);
        let mut ez = Mat::zeros(states.len(), t);
        let mut u = Mat::zeros(states.len(), d);
        for (m, s) in states.iter().enumerate() {
            elog_z.row_mut(m).copy_from_slice(&s.expected_log_z());
            ez.row_mut(m).copy_from_slice(&s.expected_z());
            u.row_mut(m).copy_from_slice(&s.u);
        }
        Self {
            elog_z,
            ez,
            u,
            scale,
        }
    }

    pub fn n_docs(&self) -> usize {
        self.elog_z.rows()
    }

    /// Effective corpus size `M` (= scale × documents present).
    pub fn effective_docs(&self) -> f64 {
        self.scale * self.n_docs() as f64
    }

    /// `G_k = scale · Σ_m (E[ln Z_k^{(m)}] − ℓ̂_kᵀû_m)` (no location term under HDP).
    pub fn stick_data(&self, global: &GlobalState) -> Vec<f64> {
        let t = global.n_topics();
        let mut g = vec![0.0; t];
        for m in 0..self.n_docs() {
            let u = self.u.row(m);
            let elz = self.elog_z.row(m);
            for k in 0..t {
                g[k] += elz[k] + global.ln_rate(k, u);
            }
        }
        g.iter_mut().for_each(|x| *x *= self.scale);
        g
    }
}

/// Summed indicator mass `Σ_m Σ_w count_w φ_{w,k} I(w = d)` as T × V.
pub fn topic_word_stats(docs: &[&Document], states: &[DocumentState], t: usize, v: usize) -> Mat {
    let mut word_major = Mat::zeros(v, t);
    for (doc, st) in docs.iter().zip(states) {
        for (row, &(w, c)) in doc.entries().iter().enumerate() {
            let acc = word_major.row_mut(w);
            for (a, p) in acc.iter_mut().zip(st.phi.row(row)) {
                *a += c as f64 * p;
            }
        }
    }
    let mut out = Mat::zeros(t, v);
    for w in 0..v {
        for k in 0..t {
            out.set(k, w, word_major.get(w, k));
        }
    }
    out
}

/// `γ_{k,d} = γ₀ + stat_{k,d}`.
pub fn update_eta(global: &mut GlobalState, stats: &Mat, gamma0: f64) -> Result<()> {
    if let Some(s) = stats.as_slice().iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Domain(format!("negative topic statistic {s}")));
    }
    for (g, s) in global.gamma.as_mut_slice().iter_mut().zip(stats.as_slice()) {
        *g = gamma0 + s;
    }
    Ok(())
}

/// Terms of the bound that move with the sticks (given `G`, `M`, α, β).
#[derive(Debug, Clone)]
pub struct StickProblem<'a> {
    pub data: &'a [f64],
    pub n_docs: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl StickProblem<'_> {
    pub fn objective(&self, sticks: &[f64]) -> f64 {
        let t = sticks.len();
        let p = stick_weights(sticks);
        let prior: f64 = sticks[..t - 1]
            .iter()
            .map(|v| (self.alpha - 1.0) * (1.0 - v).ln())
            .sum();
        prior
            + p.iter()
                .zip(self.data)
                .map(|(&pk, &gk)| {
                    let s = self.beta * pk;
                    s * gk - self.n_docs * ln_gamma(s)
                })
                .sum::<f64>()
    }

    /// First derivative of each `f_k(p_k) = βp_k G_k − M lnΓ(βp_k)`.
    fn weight_grad(&self, p: &[f64]) -> Vec<f64> {
        p.iter()
            .zip(self.data)
            .map(|(&pk, &gk)| self.beta * (gk - self.n_docs * digamma(self.beta * pk)))
            .collect()
    }

    /// Exact gradient in the free sticks `V_1..V_{T−1}`, chained through every
    /// weight `p_j` with `j ≥ k`.
    pub fn gradient(&self, sticks: &[f64]) -> Vec<f64> {
        let t = sticks.len();
        let p = stick_weights(sticks);
        let f1 = self.weight_grad(&p);
        let mut tail = vec![0.0; t + 1];
        for k in (0..t).rev() {
            tail[k] = tail[k + 1] + f1[k] * p[k];
        }
        let mut rest = 1.0;
        (0..t - 1)
            .map(|i| {
                let one_minus = 1.0 - sticks[i];
                let g = -(self.alpha - 1.0) / one_minus + f1[i] * rest - tail[i + 1] / one_minus;
                rest *= one_minus;
                g
            })
            .collect()
    }

    /// Exact Hessian in the free sticks.
    pub fn hessian(&self, sticks: &[f64]) -> DMatrix<f64> {
        let t = sticks.len();
        let n = t - 1;
        let p = stick_weights(sticks);
        let f1 = self.weight_grad(&p);
        let f2: Vec<f64> = p
            .iter()
            .map(|&pk| -self.beta * self.beta * self.n_docs * trigamma(self.beta * pk))
            .collect();
        let mut rest = vec![1.0; t];
        for k in 1..t {
            rest[k] = rest[k - 1] * (1.0 - sticks[k - 1]);
        }
        // jac[k][i] = ∂p_k/∂V_i
        let mut jac = vec![vec![0.0; n]; t];
        for k in 0..t {
            for i in 0..n.min(k + 1) {
                jac[k][i] = if i == k {
                    rest[k]
                } else {
                    -p[k] / (1.0 - sticks[i])
                };
            }
        }
        let mut h = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            h[(i, i)] = -(self.alpha - 1.0) / (1.0 - sticks[i]).powi(2);
        }
        for k in 0..t {
            let lim = n.min(k + 1);
            for i in 0..lim {
                for r in 0..lim {
                    let mut v = f2[k] * jac[k][i] * jac[k][r];
                    if i != r {
                        let second = if i == k || r == k {
                            let other = if i == k { r } else { i };
                            -rest[k] / (1.0 - sticks[other])
                        } else {
                            p[k] / ((1.0 - sticks[i]) * (1.0 - sticks[r]))
                        };
                        v += f1[k] * second;
                    }
                    h[(i, r)] += v;
                }
            }
        }
        h
    }
}

/// The factor `p_k/V_k − Σ_{j>k} p_j/(1 − V_k)` that multiplies the weight
/// derivative in the factored form of the stick gradient. With `V_T = 1` the
/// tail telescopes to `Π_{j≤k}(1 − V_j)` and the factor is identically zero,
/// which is why [`StickProblem::gradient`] chains through every weight instead.
pub fn stick_bracket(sticks: &[f64], k: usize) -> f64 {
    let p = stick_weights(sticks);
    let tail: f64 = p[k + 1..].iter().sum();
    p[k] / sticks[k] - tail / (1.0 - sticks[k])
}

fn clip_stick(v: f64) -> f64 {
    v.clamp(STICK_MIN, STICK_MAX)
}

fn step_sticks(sticks: &[f64], dir: &[f64], scale: f64) -> Vec<f64> {
    let mut out: Vec<f64> = sticks[..sticks.len() - 1]
        .iter()
        .zip(dir)
        .map(|(v, d)| clip_stick(v + scale * d))
        .collect();
    out.push(1.0);
    out
}

/// Ascent on the sticks. Each step first tries the damped Newton direction,
/// then a steepest-ascent step capped at 0.1 per stick, each with up to ten
/// halvings; a step is taken only if the objective does not decrease.
pub fn update_v(global: &mut GlobalState, ev: &Evidence, steps: usize) {
    let t = global.n_topics();
    if t < 2 {
        return;
    }
    let data = ev.stick_data(global);
    let prob = StickProblem {
        data: &data,
        n_docs: ev.effective_docs(),
        alpha: global.alpha,
        beta: global.beta,
    };
    let mut current = prob.objective(&global.sticks);
    for _ in 0..steps {
        let grad = prob.gradient(&global.sticks);
        let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if !(gmax > 1e-12) {
            break;
        }
        let mut directions = Vec::with_capacity(2);
        let neg_h = -prob.hessian(&global.sticks);
        if let Some(newton) = damped_solve(&neg_h, &grad) {
            directions.push(newton);
        }
        directions.push(grad.iter().map(|g| g * 0.1 / gmax).collect());
        let mut moved = false;
        'dirs: for dir in &directions {
            let mut s = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let proposal = step_sticks(&global.sticks, dir, s);
                let value = prob.objective(&proposal);
                if value >= current && proposal != global.sticks {
                    let gain = value - current;
                    global.sticks = proposal;
                    current = value;
                    moved = gain > 1e-12 * current.abs().max(1.0);
                    break 'dirs;
                }
                s *= 0.5;
            }
        }
        if !moved {
            break;
        }
    }
}

/// Terms of the bound that move with topic location `ℓ̂_k`.
pub fn ell_objective(ev: &Evidence, k: usize, ell: &[f64], c: f64, shape: f64) -> f64 {
    let mut acc = 0.0;
    for m in 0..ev.n_docs() {
        let lr = -dot(ell, ev.u.row(m)).clamp(-DOT_CLAMP, DOT_CLAMP);
        acc += shape * lr - lr.exp() * ev.ez.get(m, k);
    }
    ev.scale * acc - dot(ell, ell) / (2.0 * c)
}

/// `−ℓ̂_k/c + scale · Σ_m (E[Z_k^{(m)}] e^{−û_mᵀℓ̂_k} − β̂p_k) û_m`.
pub fn ell_gradient(ev: &Evidence, k: usize, ell: &[f64], c: f64, shape: f64) -> Vec<f64> {
    let mut grad = vec![0.0; ell.len()];
    for m in 0..ev.n_docs() {
        let u = ev.u.row(m);
        let s = dot(ell, u);
        if s.abs() > DOT_CLAMP {
            continue;
        }
        let coef = ev.ez.get(m, k) * (-s).exp() - shape;
        for (g, ui) in grad.iter_mut().zip(u) {
            *g += coef * ui;
        }
    }
    grad.iter()
        .zip(ell)
        .map(|(g, l)| ev.scale * g - l / c)
        .collect()
}

/// Negative Hessian `c⁻¹I + scale · Σ_m E[Z_k^{(m)}] e^{−ℓ̂_kᵀû_m} û_m û_mᵀ`.
pub fn ell_neg_hessian(ev: &Evidence, k: usize, ell: &[f64], c: f64) -> DMatrix<f64> {
    let d = ell.len();
    let mut h = DMatrix::<f64>::identity(d, d) / c;
    for m in 0..ev.n_docs() {
        let u = ev.u.row(m);
        let s = dot(ell, u);
        if s.abs() > DOT_CLAMP {
            continue;
        }
        let w = ev.scale * ev.ez.get(m, k) * (-s).exp();
        for i in 0..d {
            for j in 0..d {
                h[(i, j)] += w * u[i] * u[j];
            }
        }
    }
    h
}

/// Gradient ascent on each topic location with `ρ_s = (1/M)(3+s)^{−1}`,
/// halving any step that would lower the bound. No-op under HDP.
pub fn update_ell(global: &mut GlobalState, ev: &Evidence, c: f64, steps: usize) {
    if global.mode == Mode::Hdp {
        return;
    }
    let p = global.weights();
    let m_eff = ev.effective_docs();
    for k in 0..global.n_topics() {
        let shape = global.beta * p[k];
        let mut ell = global.ell.row(k).to_vec();
        let mut current = ell_objective(ev, k, &ell, c, shape);
        for s in 1..=steps {
            let grad = ell_gradient(ev, k, &ell, c, shape);
            if grad.iter().any(|g| !g.is_finite()) {
                log::warn!("non-finite gradient for topic location {k}; skipped");
                break;
            }
            let mut rho = 1.0 / (m_eff * (3.0 + s as f64));
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let proposal: Vec<f64> = ell.iter().zip(&grad).map(|(l, g)| l + rho * g).collect();
                let value = ell_objective(ev, k, &proposal, c, shape);
                if value >= current {
                    ell = proposal;
                    current = value;
                    accepted = true;
                    break;
                }
                rho *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        global.ell.row_mut(k).copy_from_slice(&ell);
    }
}

/// Closed-form `α̂ = (T + τ₁ − 2)/(τ₂ − Σ_{k<T} ln(1 − V̂_k))`.
pub fn update_alpha(global: &mut GlobalState, tau1: f64, tau2: f64) {
    let t = global.n_topics();
    let num = t as f64 + tau1 - 2.0;
    if num <= 0.0 {
        return;
    }
    let denom = tau2
        - global.sticks[..t - 1]
            .iter()
            .map(|v| (1.0 - v).ln())
            .sum::<f64>();
    global.alpha = num / denom;
}

/// Terms of the bound that move with β̂.
#[derive(Debug, Clone)]
pub struct BetaProblem<'a> {
    pub weights: &'a [f64],
    pub data: &'a [f64],
    pub n_docs: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl BetaProblem<'_> {
    pub fn objective(&self, beta: f64) -> f64 {
        let fit: f64 = self
            .weights
            .iter()
            .zip(self.data)
            .map(|(&p, &g)| beta * p * g - self.n_docs * ln_gamma(beta * p))
            .sum();
        fit + (self.kappa1 - 1.0) * beta.ln() - self.kappa2 * beta
    }

    /// `Σ_{m,k} p_k(ψ(a_k) − ln b_k − ℓ̂_kᵀû_m − ψ(β̂p_k)) + (κ₁ − 1)/β̂ − κ₂`.
    pub fn gradient(&self, beta: f64) -> f64 {
        let fit: f64 = self
            .weights
            .iter()
            .zip(self.data)
            .map(|(&p, &g)| p * (g - self.n_docs * digamma(beta * p)))
            .sum();
        fit + (self.kappa1 - 1.0) / beta - self.kappa2
    }

    pub fn second_derivative(&self, beta: f64) -> f64 {
        let fit: f64 = self
            .weights
            .iter()
            .map(|&p| -self.n_docs * p * p * trigamma(beta * p))
            .sum();
        fit - (self.kappa1 - 1.0) / (beta * beta)
    }

    /// Backtracking ascent from `start` to a local maximum (step tolerance
    /// `tol` relative to β, at most `max_steps`). The trial step is the Newton
    /// step when the curvature is negative; β stays positive.
    pub fn maximize(&self, start: f64, tol: f64, max_steps: usize) -> f64 {
        let mut beta = start;
        let mut current = self.objective(beta);
        for _ in 0..max_steps {
            let g = self.gradient(beta);
            if !g.is_finite() || g == 0.0 {
                break;
            }
            let h = self.second_derivative(beta);
            let mut step = if h < 0.0 { -g / h } else { g.signum() * beta };
            let mut accepted = false;
            for _ in 0..60 {
                let proposal = beta + step;
                if proposal > 0.0 {
                    let value = self.objective(proposal);
                    if value >= current {
                        beta = proposal;
                        current = value;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted || step.abs() < tol * beta.max(1.0) {
                break;
            }
        }
        beta
    }
}

pub const BETA_TOL: f64 = 1e-6;
pub const BETA_MAX_STEPS: usize = 100;

pub fn update_beta(global: &mut GlobalState, ev: &Evidence, kappa1: f64, kappa2: f64) {
    let p = global.weights();
    let data = ev.stick_data(global);
    let prob = BetaProblem {
        weights: &p,
        data: &data,
        n_docs: ev.effective_docs(),
        kappa1,
        kappa2,
    };
    global.beta = prob.maximize(global.beta, BETA_TOL, BETA_MAX_STEPS);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOptions {
    pub alpha0: f64,
    pub beta0: f64,
    pub kmeans_iters: usize,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            beta0: 5.0,
            kmeans_iters: 3,
        }
    }
}

/// L1 distance between a sparse empirical distribution and a dense centroid
/// that sums to one.
fn l1_to_centroid(doc: &[(usize, f64)], centroid: &[f64]) -> f64 {
    let mut d = 1.0;
    for &(w, x) in doc {
        d += (x - centroid[w]).abs() - centroid[w];
    }
    d
}

/// k-means (L1 assignment, mean centroids) on per-document word distributions,
/// centroids ordered by assignment count. Returns `(centroids, counts)`.
pub fn kmeans_l1(corpus: &Corpus, k: usize, iters: usize, seed: u64) -> (Mat, Vec<usize>) {
    let v = corpus.vocab_size();
    let m = corpus.n_docs();
    let dists: Vec<Vec<(usize, f64)>> = corpus
        .docs()
        .iter()
        .map(|d| {
            let n = d.n_tokens() as f64;
            d.entries()
                .iter()
                .map(|&(w, c)| (w, c as f64 / n))
                .collect()
        })
        .collect();
    let mut mean = vec![0.0; v];
    for d in &dists {
        for &(w, x) in d {
            mean[w] += x / m as f64;
        }
    }
    let mut rng = stream_rng(seed, 0x6b6d);
    let mut centroids = Mat::zeros(k, v);
    let picked = sample_indices(&mut rng, m, k.min(m)).into_vec();
    for (c, &doc) in picked.iter().enumerate() {
        for &(w, x) in &dists[doc] {
            centroids.set(c, w, x);
        }
    }
    // more centroids than documents: perturbed corpus means
    for c in picked.len()..k {
        let row = centroids.row_mut(c);
        let mut total = 0.0;
        for (r, mu) in row.iter_mut().zip(&mean) {
            *r = mu * rng.random_range(0.5..1.5);
            total += *r;
        }
        row.iter_mut().for_each(|r| *r /= total);
    }
    let assign = |centroids: &Mat| -> Vec<usize> {
        dists
            .par_iter()
            .map(|d| {
                let mut best = (f64::INFINITY, 0);
                for c in 0..k {
                    let dist = l1_to_centroid(d, centroids.row(c));
                    if dist < best.0 {
                        best = (dist, c);
                    }
                }
                best.1
            })
            .collect()
    };
    let mut labels = assign(&centroids);
    for _ in 0..iters {
        let mut sums = Mat::zeros(k, v);
        let mut counts = vec![0usize; k];
        for (d, &l) in dists.iter().zip(&labels) {
            counts[l] += 1;
            let row = sums.row_mut(l);
            for &(w, x) in d {
                row[w] += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let src: Vec<f64> = sums.row(c).iter().map(|s| s * inv).collect();
                centroids.row_mut(c).copy_from_slice(&src);
            }
        }
        labels = assign(&centroids);
    }
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut sorted = Mat::zeros(k, v);
    for (dst, &src) in order.iter().enumerate() {
        sorted.row_mut(dst).copy_from_slice(centroids.row(src));
    }
    (sorted, order.iter().map(|&i| counts[i]).collect())
}

/// Initial global state from k-means centroids, smoothed as
/// `γ_k = N̄·centroid_k + γ₀ + Uniform(0, 0.01·N̄)`.
pub fn init_topics(
    corpus: &Corpus,
    model: &ModelConfig,
    init: &InitOptions,
    seed: u64,
) -> Result<GlobalState> {
    model.validate()?;
    let t = model.truncation;
    let (centroids, _) = kmeans_l1(corpus, t, init.kmeans_iters, seed);
    let mean_len = corpus.n_tokens() as f64 / corpus.n_docs() as f64;
    let mut rng = stream_rng(seed, 0x696e);
    let noise = Uniform::new(0.0, 0.01 * mean_len).expect("positive width");
    let mut gamma = Mat::zeros(t, corpus.vocab_size());
    for (g, c) in gamma.as_mut_slice().iter_mut().zip(centroids.as_slice()) {
        *g = mean_len * c + model.gamma0 + rng.sample(noise);
    }
    let mut sticks = vec![1.0 / (1.0 + init.alpha0); t];
    sticks[t - 1] = 1.0;
    let normal = Normal::new(0.0, model.location_var.sqrt()).expect("c > 0");
    let mut ell = Mat::zeros(t, model.latent_dim);
    for x in ell.as_mut_slice() {
        *x = rng.sample(normal);
    }
    Ok(GlobalState {
        gamma,
        sticks,
        ell,
        alpha: init.alpha0,
        beta: init.beta0,
        mode: model.mode,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchTrainConfig {
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub init: InitOptions,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub ell_steps: usize,
    pub v_steps: usize,
}

impl Default for BatchTrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            fit: FitConfig::default(),
            init: InitOptions::default(),
            rel_tol: 1e-3,
            max_iters: 100,
            seed: 0,
            ell_steps: 20,
            v_steps: 5,
        }
    }
}

impl BatchTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return Err(Error::config("rel_tol", "must lie in (0, 1)"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be >= 1"));
        }
        if self.fit.inner_iters == 0 {
            return Err(Error::config("inner_iters", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub docs_seen: u64,
    pub rho: f64,
    pub bound: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Per-iteration training log; wall-clock seconds are kept apart from the
/// deterministic records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
    pub seconds: Vec<f64>,
    /// Optional held-out perplexity at selected iterations.
    pub evaluations: Vec<(usize, f64)>,
}

impl TrainTrace {
    pub fn push(&mut self, record: TraceRecord, seconds: f64) {
        self.records.push(record);
        self.seconds.push(seconds);
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.bound).collect()
    }

    /// Tab-separated log: iteration, docs seen, ρ, bound, α̂, β̂, seconds.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("iteration\tdocs_seen\trho\tbound\talpha\tbeta\tseconds\n");
        for (r, s) in self.records.iter().zip(&self.seconds) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\n",
                r.iteration, r.docs_seen, r.rho, r.bound, r.alpha, r.beta, s
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub global: GlobalState,
    pub states: Vec<DocumentState>,
    pub trace: TrainTrace,
}

/// Full E-step: fits every document (warm-started from `states` when given).
pub fn e_step(
    docs: &[&Document],
    global: &GlobalState,
    fit: &FitConfig,
    states: Option<Vec<DocumentState>>,
) -> Vec<DocumentState> {
    let ctx = FitContext::new(global);
    let mut states =
        states.unwrap_or_else(|| docs.iter().map(|d| init_document(d, &ctx)).collect());
    states
        .par_iter_mut()
        .zip(docs.par_iter())
        .for_each(|(st, doc)| {
            fit_document_from(doc, st, &ctx, fit);
        });
    states
}

/// Corpus-level block in the order topics → sticks → locations → α̂ → β̂.
pub fn m_step(
    global: &mut GlobalState,
    docs: &[&Document],
    states: &[DocumentState],
    cfg: &BatchTrainConfig,
) -> Result<()> {
    let model = &cfg.model;
    let stats = topic_word_stats(docs, states, global.n_topics(), global.vocab_size());
    update_eta(global, &stats, model.gamma0)?;
    let ev = Evidence::from_states(states, 1.0);
    update_v(global, &ev, cfg.v_steps);
    update_ell(global, &ev, model.location_var, cfg.ell_steps);
    update_alpha(global, model.tau1, model.tau2);
    update_beta(global, &ev, model.kappa1, model.kappa2);
    Ok(())
}

pub fn train_batch(corpus: &Corpus, cfg: &BatchTrainConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let init = init_topics(corpus, &cfg.model, &cfg.init, cfg.seed)?;
    train_batch_from(corpus, cfg, init, None)
}

/// Batch coordinate ascent from a given global state (and optional document
/// states) until the relative bound change falls below `rel_tol`.
pub fn train_batch_from(
    corpus: &Corpus,
    cfg: &BatchTrainConfig,
    mut global: GlobalState,
    states: Option<Vec<DocumentState>>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    global.mode = cfg.model.mode;
    let docs: Vec<&Document> = corpus.docs().iter().collect();
    let priors = Priors::from(&cfg.model);
    let mut states = states;
    let mut trace = TrainTrace::default();
    let start = Instant::now();
    let mut prev: Option<f64> = None;
    for iteration in 1..=cfg.max_iters {
        let fitted = e_step(&docs, &global, &cfg.fit, states.take());
        m_step(&mut global, &docs, &fitted, cfg)?;
        let bound = compute_bound_scaled(&docs, &fitted, &global, &priors, 1.0)?.total;
        trace.push(
            TraceRecord {
                iteration,
                docs_seen: (iteration * docs.len()) as u64,
                rho: 1.0,
                bound,
                alpha: global.alpha,
                beta: global.beta,
            },
            start.elapsed().as_secs_f64(),
        );
        log::info!(
            "batch iteration {iteration}: bound {bound:.6e} alpha {:.4} beta {:.4}",
            global.alpha,
            global.beta
        );
        states = Some(fitted);
        if let Some(p) = prev {
            if ((bound - p) / p).abs() < cfg.rel_tol {
                break;
            }
        }
        prev = Some(bound);
    }
    let states = states.expect("at least one iteration");
    Ok(TrainOutput {
        global,
        states,
        trace,
    })
}

/// Expected token mass per topic, `Σ_m Σ_w count_w φ_{w,k}`.
pub fn topic_usage(docs: &[Document], states: &[DocumentState]) -> Vec<f64> {
    let t = states.first().map_or(0, |s| s.n_topics());
    let mut usage = vec![0.0; t];
    for (d, s) in docs.iter().zip(states) {
        for (u, c) in usage.iter_mut().zip(crate::vb::topic_counts(d, &s.phi)) {
            *u += c;
        }
    }
    usage
}
