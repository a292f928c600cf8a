//! Stochastic variational inference over minibatches.
//!
//! Each step fits the document factors of a minibatch from scratch, forms the
//! corpus-level statistics as if the minibatch were replicated `M/|B|` times,
//! and moves the global factors a step `ρ_t` toward the resulting optimum.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::batch::{
    e_step, ell_gradient, ell_neg_hessian, init_topics, topic_word_stats, update_alpha,
    BetaProblem, Evidence, InitOptions, StickProblem, TraceRecord, TrainOutput, TrainTrace,
    BETA_MAX_STEPS, BETA_TOL, STICK_MAX, STICK_MIN,
};
use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::linalg::damped_solve;
use crate::mat::Mat;
use crate::model::{DocumentState, GlobalState, Mode, ModelConfig};
use crate::rng::stream_rng;
use crate::vb::{compute_bound_scaled, fit_document_ctx, FitConfig, FitContext, Priors};

/// `ρ_t = (ζ + t)^{−κ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub zeta: f64,
    pub kappa: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self {
            zeta: 25.0,
            kappa: 0.75,
        }
    }
}

impl StepSchedule {
    pub fn new(zeta: f64, kappa: f64) -> Result<Self> {
        let s = Self { zeta, kappa };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::config("zeta", "must be positive"));
        }
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(Error::config("kappa", "must lie in (0.5, 1]"));
        }
        Ok(())
    }

    pub fn step_size(&self, t: u64) -> f64 {
        (self.zeta + t as f64).powf(-self.kappa)
    }
}

/// Minibatches of a fixed size drawn without replacement within an epoch and
/// reshuffled between epochs; the final batch of an epoch may be smaller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinibatchPlan {
    pub batch_size: usize,
    pub seed: u64,
}

impl MinibatchPlan {
    pub fn validate(&self, n_docs: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n_docs {
            return Err(Error::config(
                "batch_size",
                format!("must lie in [1, {n_docs}], got {}", self.batch_size),
            ));
        }
        Ok(())
    }

    pub fn epoch(&self, n_docs: usize, epoch: u64) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n_docs).collect();
        order.shuffle(&mut stream_rng(self.seed, 0x6570_0000 + epoch));
        order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// `M/|B|`, exactly 1 when the minibatch is the corpus.
pub fn minibatch_scale(n_docs: usize, batch: usize) -> f64 {
    if n_docs == batch {
        1.0
    } else {
        n_docs as f64 / batch as f64
    }
}

/// Minibatch topic statistics multiplied by `M/|B|`.
pub fn scaled_topic_stats(
    docs: &[&Document],
    states: &[DocumentState],
    t: usize,
    v: usize,
    scale: f64,
) -> Mat {
    let mut stats = topic_word_stats(docs, states, t, v);
    if scale != 1.0 {
        stats.as_mut_slice().iter_mut().for_each(|s| *s *= scale);
    }
    stats
}

/// `γ ← (1 − ρ)γ + ρ(γ₀ + stat)`, where `stat` is already scaled.
pub fn stoch_update_gamma(global: &mut GlobalState, scaled_stats: &Mat, gamma0: f64, rho: f64) {
    for (g, s) in global
        .gamma
        .as_mut_slice()
        .iter_mut()
        .zip(scaled_stats.as_slice())
    {
        *g = (1.0 - rho) * *g + rho * (gamma0 + s);
    }
}

/// Inverse preconditioner `c⁻¹I + Σ_m E[Z_k] e^{−ℓ̂_kᵀû_m} û_m û_mᵀ` for topic `k`.
pub fn precondition_ell(global: &GlobalState, ev: &Evidence, k: usize, c: f64) -> DMatrix<f64> {
    ell_neg_hessian(ev, k, global.ell.row(k), c)
}

/// Newton-style step `ℓ̂_k ← ℓ̂_k + ρ A ∇` for every topic. No-op under HDP.
pub fn stoch_update_ell(global: &mut GlobalState, ev: &Evidence, c: f64, rho: f64) {
    if global.mode == Mode::Hdp {
        return;
    }
    let p = global.weights();
    for k in 0..global.n_topics() {
        let shape = global.beta * p[k];
        let ell = global.ell.row(k).to_vec();
        let grad = ell_gradient(ev, k, &ell, c, shape);
        let dir = damped_solve(&ell_neg_hessian(ev, k, &ell, c), &grad);
        match dir {
            Some(dir) if dir.iter().all(|x| x.is_finite()) => {
                for (l, d) in global.ell.row_mut(k).iter_mut().zip(&dir) {
                    *l += rho * d;
                }
            }
            _ => log::warn!("topic location {k}: no finite preconditioned step; skipped"),
        }
    }
}

/// Exact Hessian of the bound in the free sticks, given minibatch evidence.
pub fn hessian_v(global: &GlobalState, ev: &Evidence) -> DMatrix<f64> {
    let data = ev.stick_data(global);
    stick_problem(global, ev, &data).hessian(&global.sticks)
}

fn stick_problem<'a>(global: &GlobalState, ev: &Evidence, data: &'a [f64]) -> StickProblem<'a> {
    StickProblem {
        data,
        n_docs: ev.effective_docs(),
        alpha: global.alpha,
        beta: global.beta,
    }
}

/// `V̂ ← clip(V̂ + ρ A ∇)` with `A` the damped inverse negative Hessian, or a
/// `1/T`-scaled gradient step when no damping makes it positive definite.
pub fn stoch_update_v(global: &mut GlobalState, ev: &Evidence, rho: f64) {
    let t = global.n_topics();
    if t < 2 {
        return;
    }
    let data = ev.stick_data(global);
    let prob = stick_problem(global, ev, &data);
    let grad = prob.gradient(&global.sticks);
    let dir = damped_solve(&(-prob.hessian(&global.sticks)), &grad)
        .filter(|d| d.iter().all(|x| x.is_finite()))
        .unwrap_or_else(|| grad.iter().map(|g| g / t as f64).collect());
    for (v, d) in global.sticks[..t - 1].iter_mut().zip(&dir) {
        *v = (*v + rho * d).clamp(STICK_MIN, STICK_MAX);
    }
}

/// Minibatch-optimal `β̃`, then `β̂ ← (1 − ρ)β̂ + ρβ̃`.
pub fn stoch_update_beta(
    global: &mut GlobalState,
    ev: &Evidence,
    kappa1: f64,
    kappa2: f64,
    rho: f64,
) -> f64 {
    let p = global.weights();
    let data = ev.stick_data(global);
    let prob = BetaProblem {
        weights: &p,
        data: &data,
        n_docs: ev.effective_docs(),
        kappa1,
        kappa2,
    };
    let tilde = prob.maximize(global.beta, BETA_TOL, BETA_MAX_STEPS);
    global.beta = (1.0 - rho) * global.beta + rho * tilde;
    tilde
}

/// Which global factors a stochastic step touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateSelection {
    pub gamma: bool,
    pub sticks: bool,
    pub ell: bool,
    pub alpha: bool,
    pub beta: bool,
}

impl Default for UpdateSelection {
    fn default() -> Self {
        Self {
            gamma: true,
            sticks: true,
            ell: true,
            alpha: true,
            beta: true,
        }
    }
}

impl UpdateSelection {
    pub fn closed_form_only() -> Self {
        Self {
            gamma: true,
            sticks: false,
            ell: false,
            alpha: true,
            beta: false,
        }
    }
}

/// One stochastic step on already-fitted minibatch states.
pub fn stochastic_step(
    global: &mut GlobalState,
    docs: &[&Document],
    states: &[DocumentState],
    n_corpus_docs: usize,
    model: &ModelConfig,
    rho: f64,
    updates: UpdateSelection,
) {
    let scale = minibatch_scale(n_corpus_docs, docs.len());
    if updates.gamma {
        let stats = scaled_topic_stats(docs, states, global.n_topics(), global.vocab_size(), scale);
        stoch_update_gamma(global, &stats, model.gamma0, rho);
    }
    let ev = Evidence::from_states(states, scale);
    if updates.sticks {
        stoch_update_v(global, &ev, rho);
    }
    if updates.ell {
        stoch_update_ell(global, &ev, model.location_var, rho);
    }
    if updates.alpha {
        update_alpha(global, model.tau1, model.tau2);
    }
    if updates.beta {
        stoch_update_beta(global, &ev, model.kappa1, model.kappa2, rho);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticConfig {
    pub model: ModelConfig,
    pub fit: FitConfig,
    pub init: InitOptions,
    pub schedule: StepSchedule,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub updates: UpdateSelection,
    /// Documents used to seed the k-means initialization (all when `None`).
    pub init_docs: Option<usize>,
    /// Run the evaluation hook after every `eval_every` batches.
    pub eval_every: Option<usize>,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig {
                gamma0: 0.01,
                ..ModelConfig::default()
            },
            fit: FitConfig {
                inner_iters: 10,
                ..FitConfig::default()
            },
            init: InitOptions::default(),
            schedule: StepSchedule::default(),
            batch_size: 250,
            epochs: 1,
            seed: 0,
            updates: UpdateSelection::default(),
            init_docs: None,
            eval_every: Some(10),
        }
    }
}

impl StochasticConfig {
    pub fn validate(&self, n_docs: usize) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.plan().validate(n_docs)?;
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.fit.inner_iters == 0 {
            return Err(Error::config("inner_iters", "must be >= 1"));
        }
        if self.eval_every == Some(0) {
            return Err(Error::config("eval_every", "must be >= 1"));
        }
        Ok(())
    }

    pub fn plan(&self) -> MinibatchPlan {
        MinibatchPlan {
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

/// Called as `hook(batches_done, docs_seen, global)`; a returned value is
/// recorded in the trace's evaluation column.
pub type EvalHook<'a> = dyn FnMut(usize, u64, &GlobalState) -> Option<f64> + 'a;

pub fn initial_state(corpus: &Corpus, cfg: &StochasticConfig) -> Result<GlobalState> {
    match cfg.init_docs {
        Some(n) if n < corpus.n_docs() => {
            let mut idx: Vec<usize> = (0..corpus.n_docs()).collect();
            idx.shuffle(&mut stream_rng(cfg.seed, 0x7375_6273));
            idx.truncate(n.max(1));
            idx.sort_unstable();
            init_topics(&corpus.select(&idx)?, &cfg.model, &cfg.init, cfg.seed)
        }
        _ => init_topics(corpus, &cfg.model, &cfg.init, cfg.seed),
    }
}

pub fn train_stochastic(
    corpus: &Corpus,
    cfg: &StochasticConfig,
    hook: Option<&mut EvalHook>,
) -> Result<TrainOutput> {
    cfg.validate(corpus.n_docs())?;
    let init = initial_state(corpus, cfg)?;
    train_stochastic_from(corpus, cfg, init, hook)
}

/// Runs `cfg.epochs` passes of minibatch updates from `global`, then fits
/// every document once against the final state.
pub fn train_stochastic_from(
    corpus: &Corpus,
    cfg: &StochasticConfig,
    mut global: GlobalState,
    mut hook: Option<&mut EvalHook>,
) -> Result<TrainOutput> {
    cfg.validate(corpus.n_docs())?;
    global.mode = cfg.model.mode;
    let priors = Priors::from(&cfg.model);
    let plan = cfg.plan();
    let m = corpus.n_docs();
    let mut trace = TrainTrace::default();
    let start = Instant::now();
    let mut t: u64 = 0;
    let mut docs_seen: u64 = 0;
    for epoch in 0..cfg.epochs as u64 {
        for batch in plan.epoch(m, epoch) {
            let docs: Vec<&Document> = batch.iter().map(|&i| &corpus.docs()[i]).collect();
            let states: Vec<DocumentState> = {
                let ctx = FitContext::new(&global);
                docs.par_iter()
                    .map(|d| fit_document_ctx(d, &ctx, &cfg.fit))
                    .collect()
            };
            let rho = cfg.schedule.step_size(t);
            stochastic_step(&mut global, &docs, &states, m, &cfg.model, rho, cfg.updates);
            global.validate()?;
            t += 1;
            docs_seen += docs.len() as u64;
            let bound = compute_bound_scaled(
                &docs,
                &states,
                &global,
                &priors,
                minibatch_scale(m, docs.len()),
            )?
            .total;
            trace.push(
                TraceRecord {
                    iteration: t as usize,
                    docs_seen,
                    rho,
                    bound,
                    alpha: global.alpha,
                    beta: global.beta,
                },
                start.elapsed().as_secs_f64(),
            );
            log::info!("batch {t}: rho {rho:.4} bound estimate {bound:.6e}");
            if let (Some(every), Some(h)) = (cfg.eval_every, hook.as_deref_mut()) {
                if t as usize % every == 0 {
                    if let Some(v) = h(t as usize, docs_seen, &global) {
                        trace.evaluations.push((t as usize, v));
                    }
                }
            }
        }
    }
    let docs: Vec<&Document> = corpus.docs().iter().collect();
    let states = e_step(&docs, &global, &cfg.fit, None);
    Ok(TrainOutput {
        global,
        states,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::is_symmetric_pd;
    use approx::assert_relative_eq;

    #[test]
    fn step_size_substitution_and_monotone() {
        let s = StepSchedule::new(25.0, 0.6).unwrap();
        assert_relative_eq!(s.step_size(0), 25f64.powf(-0.6), max_relative = 1e-15);
        assert!((0..100).all(|t| s.step_size(t + 1) < s.step_size(t)));
        assert!(StepSchedule::new(25.0, 0.5).is_err());
        assert!(StepSchedule::new(25.0, 1.1).is_err());
        assert!(StepSchedule::new(0.0, 0.7).is_err());
        assert!(StepSchedule::new(1.0, 1.0).is_ok());
    }

    #[test]
    fn robbins_monro_partial_sums() {
        // κ = 0.6: Σρ diverges as n^{0.4}, Σρ² converges as n^{−0.2}
        let s = StepSchedule::new(25.0, 0.6).unwrap();
        let (mut s1, mut s2) = (0.0, 0.0);
        let mut checkpoints = Vec::new();
        for t in 0..1_000_000u64 {
            let r = s.step_size(t);
            s1 += r;
            s2 += r * r;
            if [9_999, 999_999].contains(&t) {
                checkpoints.push((s1, s2));
            }
        }
        let (a, b) = (checkpoints[0], checkpoints[1]);
        // first sum grows like the analytic integral ratio 100^{0.4} ≈ 6.3
        assert!(b.0 / a.0 > 5.0);
        // tail of the squared series beyond 10⁴ is below 5·(ζ+10⁴)^{−0.2}
        assert!(b.1 - a.1 < 5.0 * (25.0f64 + 1e4).powf(-0.2));
        assert!(b.1 < 5.0 * 25f64.powf(-0.2) + 1.0);
    }

    #[test]
    fn epochs_partition_documents() {
        let plan = MinibatchPlan {
            batch_size: 4,
            seed: 3,
        };
        let e0 = plan.epoch(10, 0);
        assert_eq!(e0.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<usize> = e0.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_ne!(plan.epoch(10, 0), plan.epoch(10, 1));
        assert_eq!(plan.epoch(10, 1), plan.epoch(10, 1));
        assert!(plan.validate(3).is_err());
        assert!(MinibatchPlan {
            batch_size: 0,
            seed: 0
        }
        .validate(3)
        .is_err());
    }

    fn global(t: usize, v: usize, d: usize) -> GlobalState {
        let mut sticks = vec![0.4; t];
        sticks[t - 1] = 1.0;
        let mut ell = Mat::zeros(t, d);
        for (i, x) in ell.as_mut_slice().iter_mut().enumerate() {
            *x = ((i * 37 % 11) as f64 - 5.0) / 10.0;
        }
        GlobalState {
            gamma: Mat::filled(t, v, 2.0),
            sticks,
            ell,
            alpha: 1.5,
            beta: 3.0,
            mode: Mode::Diln,
        }
    }

    #[test]
    fn gamma_step_interpolates() {
        let mut g = global(2, 3, 2);
        let mut stats = Mat::zeros(2, 3);
        stats.set(0, 1, 4.0);
        let before = g.clone();
        stoch_update_gamma(&mut g, &stats, 0.5, 0.0);
        assert_eq!(g, before);
        stoch_update_gamma(&mut g, &stats, 0.5, 0.5);
        assert_eq!(g.gamma.get(0, 1), (2.0 + 4.5) / 2.0);
        assert_eq!(g.gamma.get(1, 1), (2.0 + 0.5) / 2.0);
        stoch_update_gamma(&mut g, &stats, 0.5, 1.0);
        assert_eq!(g.gamma.get(0, 1), 4.5);
    }

    fn evidence(m: usize, t: usize, d: usize, scale: f64) -> Evidence {
        let mut ev = Evidence {
            elog_z: Mat::zeros(m, t),
            ez: Mat::zeros(m, t),
            u: Mat::zeros(m, d),
            scale,
        };
        for i in 0..m {
            for k in 0..t {
                ev.ez.set(i, k, 0.5 + ((i + 2 * k) % 3) as f64);
                ev.elog_z.set(i, k, ev.ez.get(i, k).ln() - 0.2);
            }
            for j in 0..d {
                ev.u.set(i, j, ((i * 3 + j * 5) % 7) as f64 / 7.0 - 0.4);
            }
        }
        ev
    }

    #[test]
    fn ell_preconditioner_matches_loop_and_is_pd() {
        let g = global(3, 2, 2);
        let ev = evidence(4, 3, 2, 2.5);
        let c = 0.3;
        for k in 0..3 {
            let a = precondition_ell(&g, &ev, k, c);
            let l = g.ell.row(k);
            let mut naive = [[0.0; 2]; 2];
            naive[0][0] = 1.0 / c;
            naive[1][1] = 1.0 / c;
            for m in 0..4 {
                let u = ev.u.row(m);
                let w = ev.ez.get(m, k) * (-(l[0] * u[0] + l[1] * u[1])).exp() * 2.5;
                for i in 0..2 {
                    for j in 0..2 {
                        naive[i][j] += w * u[i] * u[j];
                    }
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(a[(i, j)], naive[i][j], epsilon = 1e-12);
                }
            }
            assert!(is_symmetric_pd(&a, 1e-12));
        }
        // no evidence: preconditioner is c⁻¹I
        let empty = evidence(0, 3, 2, 1.0);
        let a = precondition_ell(&g, &empty, 0, c);
        assert_eq!(a, DMatrix::identity(2, 2) / c);
    }

    #[test]
    fn beta_step_endpoints() {
        let ev = evidence(3, 3, 2, 1.0);
        let mut g = global(3, 2, 2);
        let before = g.beta;
        stoch_update_beta(&mut g, &ev, 1.0, 1e-3, 0.0);
        assert_eq!(g.beta, before);
        let tilde = stoch_update_beta(&mut g, &ev, 1.0, 1e-3, 1.0);
        assert_eq!(g.beta, tilde);
    }

    #[test]
    fn stick_step_stays_inside() {
        let ev = evidence(3, 4, 2, 10.0);
        let mut g = global(4, 2, 2);
        stoch_update_v(&mut g, &ev, 1.0);
        assert!(g.sticks[..3]
            .iter()
            .all(|&v| (STICK_MIN..=STICK_MAX).contains(&v)));
        assert_eq!(g.sticks[3], 1.0);
    }

    #[test]
    fn hdp_ignores_locations() {
        let ev = evidence(3, 3, 2, 1.0);
        let mut g = global(3, 2, 2);
        g.mode = Mode::Hdp;
        let before = g.ell.clone();
        stoch_update_ell(&mut g, &ev, 0.1, 1.0);
        assert_eq!(g.ell, before);
    }

    #[test]
    fn scale_is_exactly_one_for_full_batch() {
        assert_eq!(minibatch_scale(7, 7), 1.0);
        assert_eq!(minibatch_scale(6, 2), 3.0);
    }
}
