//! Document-level mean-field updates and the Taylor-surrogate lower bound.
//!
//! The intractable `−E[ln Σ_k Z_k]` is replaced by its first-order expansion
//! `−ln ξ − (Σ_k E[Z_k] − ξ)/ξ`, which keeps every document-level update
//! except the location `û` in closed form.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::mat::{dot, Mat};
use crate::model::{DocumentState, GlobalState, Mode, DOT_CLAMP};
use crate::special::{digamma, ln_gamma, softmax_in_place};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub inner_iters: usize,
    pub tol: f64,
    /// Gradient steps for `û` per inner iteration.
    pub u_steps: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            inner_iters: 50,
            tol: 1e-4,
            u_steps: 20,
        }
    }
}

/// Read-only quantities derived from the global state once per E-step.
pub struct FitContext<'a> {
    pub global: &'a GlobalState,
    /// V × T table of `E[ln η_k(w)] = ψ(γ_{k,w}) − ψ(Σ_d γ_{k,d})`, word-major.
    pub elog_eta: Mat,
    pub weights: Vec<f64>,
}

impl<'a> FitContext<'a> {
    pub fn new(global: &'a GlobalState) -> Self {
        Self {
            elog_eta: expected_log_eta(&global.gamma),
            weights: global.weights(),
            global,
        }
    }

    pub fn n_topics(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    fn prior_shape(&self, k: usize) -> f64 {
        self.global.beta * self.weights[k]
    }
}

/// Word-major table of Dirichlet log-expectations for a T × V parameter matrix.
pub fn expected_log_eta(gamma: &Mat) -> Mat {
    let (t, v) = (gamma.rows(), gamma.cols());
    let mut out = Mat::zeros(v, t);
    for k in 0..t {
        let row = gamma.row(k);
        let total = digamma(row.iter().sum());
        for (w, &g) in row.iter().enumerate() {
            out.set(w, k, digamma(g) - total);
        }
    }
    out
}

/// Neutral starting point: uniform φ, `a_k = β̂p_k + N/T`, unit-rate means for ξ, `û = 0`.
pub fn init_document(doc: &Document, ctx: &FitContext) -> DocumentState {
    let t = ctx.n_topics();
    let n = doc.n_tokens() as f64;
    let a: Vec<f64> = (0..t).map(|k| ctx.prior_shape(k) + n / t as f64).collect();
    let xi0: f64 = a.iter().sum();
    DocumentState {
        phi: Mat::filled(doc.n_unique(), t, 1.0 / t as f64),
        b: vec![1.0 + n / xi0; t],
        a,
        xi: xi0,
        u: vec![0.0; ctx.global.latent_dim()],
    }
}

/// `φ_{w,k} ∝ exp{E[ln η_k(w)] + E[ln Z_k]}`, once per unique term.
pub fn update_phi(doc: &Document, state: &mut DocumentState, ctx: &FitContext) {
    let elog_z = state.expected_log_z();
    for (row, &(w, _)) in doc.entries().iter().enumerate() {
        let out = state.phi.row_mut(row);
        for ((o, e), z) in out.iter_mut().zip(ctx.elog_eta.row(w)).zip(&elog_z) {
            *o = e + z;
        }
        softmax_in_place(out);
    }
}

/// Expected per-topic counts `Σ_w count_w φ_{w,k}` for one document.
pub fn topic_counts(doc: &Document, phi: &Mat) -> Vec<f64> {
    let mut counts = vec![0.0; phi.cols()];
    for (row, &(_, c)) in doc.entries().iter().enumerate() {
        for (acc, p) in counts.iter_mut().zip(phi.row(row)) {
            *acc += c as f64 * p;
        }
    }
    counts
}

/// Closed-form gamma update: `a_k = β̂p_k + Σ_w c_w φ_{w,k}`,
/// `b_k = e^{−ℓ̂_kᵀû} + N/ξ` (the first term is 1 under HDP).
pub fn update_z(doc: &Document, state: &mut DocumentState, ctx: &FitContext) {
    let counts = topic_counts(doc, &state.phi);
    let n_over_xi = doc.n_tokens() as f64 / state.xi;
    for k in 0..ctx.n_topics() {
        state.a[k] = ctx.prior_shape(k) + counts[k];
        state.b[k] = ctx.global.ln_rate(k, &state.u).exp() + n_over_xi;
    }
}

/// Tightens the Taylor expansion point: `ξ = Σ_k a_k/b_k`.
pub fn update_xi(state: &mut DocumentState) {
    state.xi = state.a.iter().zip(&state.b).map(|(a, b)| a / b).sum();
}

/// Part of the bound that depends on `û` for fixed `(a, b)`.
pub fn u_objective(u: &[f64], ez: &[f64], ctx: &FitContext) -> f64 {
    let g = ctx.global;
    let mut total = -0.5 * dot(u, u);
    for (k, &z) in ez.iter().enumerate() {
        let lr = g.ln_rate(k, u);
        total += ctx.prior_shape(k) * lr - lr.exp() * z;
    }
    total
}

/// Gradient of the bound with respect to `û`:
/// `Σ_k (E[Z_k] e^{−ℓ̂_kᵀû} − β̂p_k) ℓ̂_k − û`.
pub fn u_gradient(u: &[f64], ez: &[f64], ctx: &FitContext) -> Vec<f64> {
    let g = ctx.global;
    let mut grad: Vec<f64> = u.iter().map(|x| -x).collect();
    for (k, &z) in ez.iter().enumerate() {
        let l = g.ell.row(k);
        let s = dot(l, u);
        if s.abs() > DOT_CLAMP {
            continue;
        }
        let coef = z * (-s).exp() - ctx.prior_shape(k);
        for (gr, li) in grad.iter_mut().zip(l) {
            *gr += coef * li;
        }
    }
    grad
}

const MAX_HALVINGS: usize = 10;

/// Gradient ascent on `û` with step `ρ_s = (1/T)(3+s)^{−1}`, s = 1..steps.
///
/// Each step is halved until the bound does not decrease; a step that cannot
/// be made non-decreasing is skipped. No-op under HDP.
pub fn update_u(state: &mut DocumentState, ctx: &FitContext, steps: usize) {
    if ctx.global.mode == Mode::Hdp {
        return;
    }
    let ez = state.expected_z();
    let t = ctx.n_topics() as f64;
    let mut current = u_objective(&state.u, &ez, ctx);
    for s in 1..=steps {
        let grad = u_gradient(&state.u, &ez, ctx);
        if grad.iter().any(|g| !g.is_finite()) {
            log::warn!("non-finite document location gradient; step rejected");
            break;
        }
        let mut rho = 1.0 / (t * (3.0 + s as f64));
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let proposal: Vec<f64> = state
                .u
                .iter()
                .zip(&grad)
                .map(|(u, g)| u + rho * g)
                .collect();
            let value = u_objective(&proposal, &ez, ctx);
            if value >= current {
                state.u = proposal;
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
}

/// Coordinate ascent on one document, starting from `state`.
///
/// Cycles φ → (a, b) → ξ → û until the mean absolute change of the expected
/// proportions drops below `tol` or `inner_iters` is reached. Returns the
/// number of iterations run.
pub fn fit_document_from(
    doc: &Document,
    state: &mut DocumentState,
    ctx: &FitContext,
    cfg: &FitConfig,
) -> usize {
    let mut prev = state.proportions();
    for it in 1..=cfg.inner_iters {
        update_phi(doc, state, ctx);
        update_z(doc, state, ctx);
        update_xi(state);
        update_u(state, ctx, cfg.u_steps);
        let cur = state.proportions();
        let change = cur
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / cur.len() as f64;
        prev = cur;
        if change < cfg.tol {
            return it;
        }
    }
    cfg.inner_iters
}

pub fn fit_document_ctx(doc: &Document, ctx: &FitContext, cfg: &FitConfig) -> DocumentState {
    let mut state = init_document(doc, ctx);
    fit_document_from(doc, &mut state, ctx, cfg);
    state
}

/// Fits a document's variational parameters with the global state held fixed.
pub fn fit_document(
    doc: &Document,
    global: &GlobalState,
    cfg: &FitConfig,
) -> Result<DocumentState> {
    if doc.n_tokens() == 0 {
        return Err(Error::Validation("cannot fit an empty document".into()));
    }
    Ok(fit_document_ctx(doc, &FitContext::new(global), cfg))
}

/// Per-document contributions to the surrogate bound.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DocumentTerms {
    /// Expected word log-likelihood, indicator log-prior numerator and φ entropy.
    pub words: f64,
    /// Taylor surrogate for `−N E[ln Σ Z]`.
    pub normalizer: f64,
    pub z_prior: f64,
    pub z_entropy: f64,
    pub u_prior: f64,
}

impl DocumentTerms {
    pub fn total(&self) -> f64 {
        self.words + self.normalizer + self.z_prior + self.z_entropy + self.u_prior
    }

    fn check(&self, doc_index: usize) -> Result<()> {
        for (name, v) in [
            ("word likelihood", self.words),
            ("normalizer surrogate", self.normalizer),
            ("gamma prior", self.z_prior),
            ("gamma entropy", self.z_entropy),
            ("location prior", self.u_prior),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("document {doc_index} {name}")));
            }
        }
        Ok(())
    }
}

/// Taylor surrogate `−N(ln ξ + (Σ E[Z] − ξ)/ξ)`.
pub fn normalizer_surrogate(n_tokens: f64, sum_ez: f64, xi: f64) -> f64 {
    -n_tokens * (xi.ln() + (sum_ez - xi) / xi)
}

/// Entropy of Gamma(a, b) in the shape/rate parameterization.
pub fn gamma_entropy(a: f64, b: f64) -> f64 {
    a - b.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
}

pub fn document_terms(doc: &Document, state: &DocumentState, ctx: &FitContext) -> DocumentTerms {
    let g = ctx.global;
    let elog_z = state.expected_log_z();
    let ez = state.expected_z();
    let mut words = 0.0;
    for (row, &(w, c)) in doc.entries().iter().enumerate() {
        let phi = state.phi.row(row);
        let e = ctx.elog_eta.row(w);
        let mut acc = 0.0;
        for k in 0..phi.len() {
            let p = phi[k];
            if p > 0.0 {
                acc += p * (e[k] + elog_z[k] - p.ln());
            }
        }
        words += c as f64 * acc;
    }
    let normalizer = normalizer_surrogate(doc.n_tokens() as f64, ez.iter().sum(), state.xi);
    let mut z_prior = 0.0;
    let mut z_entropy = 0.0;
    for k in 0..ctx.n_topics() {
        let shape = ctx.prior_shape(k);
        let lr = g.ln_rate(k, &state.u);
        z_prior += shape * lr + (shape - 1.0) * elog_z[k] - lr.exp() * ez[k] - ln_gamma(shape);
        z_entropy += gamma_entropy(state.a[k], state.b[k]);
    }
    let u_prior = match g.mode {
        Mode::Diln => -0.5 * dot(&state.u, &state.u) - 0.5 * state.u.len() as f64 * LN_2PI,
        Mode::Hdp => 0.0,
    };
    DocumentTerms {
        words,
        normalizer,
        z_prior,
        z_entropy,
        u_prior,
    }
}

/// Surrogate bound split into per-document and corpus-level parts.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundValue {
    pub total: f64,
    pub per_document: Vec<f64>,
    pub corpus: f64,
}

/// Hyperparameters entering the corpus-level bound terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors {
    pub gamma0: f64,
    pub location_var: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

impl From<&crate::model::ModelConfig> for Priors {
    fn from(c: &crate::model::ModelConfig) -> Self {
        Self {
            gamma0: c.gamma0,
            location_var: c.location_var,
            tau1: c.tau1,
            tau2: c.tau2,
            kappa1: c.kappa1,
            kappa2: c.kappa2,
        }
    }
}

/// `ln Gamma(x | shape, rate)`.
pub fn ln_gamma_density(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Topic term: Dirichlet prior expectation plus q(η) entropy, summed over topics.
pub fn topic_term(gamma: &Mat, elog_eta: &Mat, gamma0: f64) -> f64 {
    let v = gamma.cols() as f64;
    let prior_norm = ln_gamma(v * gamma0) - v * ln_gamma(gamma0);
    let mut total = 0.0;
    for k in 0..gamma.rows() {
        let row = gamma.row(k);
        let mut acc = prior_norm - ln_gamma(row.iter().sum());
        for (w, &g) in row.iter().enumerate() {
            acc += (gamma0 - g) * elog_eta.get(w, k) + ln_gamma(g);
        }
        total += acc;
    }
    total
}

/// Stick prior `Σ_{k<T} [ln α + (α − 1) ln(1 − V_k)]`.
pub fn stick_prior_term(sticks: &[f64], alpha: f64) -> f64 {
    let t = sticks.len();
    sticks[..t - 1]
        .iter()
        .map(|v| alpha.ln() + (alpha - 1.0) * (1.0 - v).ln())
        .sum()
}

/// Topic-location prior `Σ_k ln Normal(ℓ_k | 0, cI)`; zero under HDP.
pub fn location_prior_term(global: &GlobalState, c: f64) -> f64 {
    if global.mode == Mode::Hdp {
        return 0.0;
    }
    let d = global.latent_dim() as f64;
    global
        .ell
        .iter_rows()
        .map(|l| -dot(l, l) / (2.0 * c) - 0.5 * d * (LN_2PI + c.ln()))
        .sum()
}

pub fn corpus_terms(global: &GlobalState, elog_eta: &Mat, priors: &Priors) -> Result<f64> {
    let parts = [
        (
            "topic prior/entropy",
            topic_term(&global.gamma, elog_eta, priors.gamma0),
        ),
        (
            "stick prior",
            stick_prior_term(&global.sticks, global.alpha),
        ),
        (
            "topic location prior",
            location_prior_term(global, priors.location_var),
        ),
        (
            "alpha prior",
            ln_gamma_density(global.alpha, priors.tau1, priors.tau2),
        ),
        (
            "beta prior",
            ln_gamma_density(global.beta, priors.kappa1, priors.kappa2),
        ),
    ];
    let mut total = 0.0;
    for (name, v) in parts {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
        total += v;
    }
    Ok(total)
}

/// Evaluates the surrogate lower bound; document terms are multiplied by
/// `scale` (1 for the full corpus, `M/|B|` for a minibatch).
pub fn compute_bound_scaled(
    docs: &[&Document],
    states: &[DocumentState],
    global: &GlobalState,
    priors: &Priors,
    scale: f64,
) -> Result<BoundValue> {
    let ctx = FitContext::new(global);
    let mut per_document = Vec::with_capacity(docs.len());
    for (m, (doc, st)) in docs.iter().zip(states).enumerate() {
        let terms = document_terms(doc, st, &ctx);
        terms.check(m)?;
        per_document.push(terms.total());
    }
    let corpus = corpus_terms(global, &ctx.elog_eta, priors)?;
    let total = scale * per_document.iter().sum::<f64>() + corpus;
    Ok(BoundValue {
        total,
        per_document,
        corpus,
    })
}

pub fn compute_bound(
    docs: &[Document],
    states: &[DocumentState],
    global: &GlobalState,
    priors: &Priors,
) -> Result<BoundValue> {
    let refs: Vec<&Document> = docs.iter().collect();
    compute_bound_scaled(&refs, states, global, priors, 1.0)
}
