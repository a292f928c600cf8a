#![allow(dead_code)]

use diln::batch::{ell_gradient, BetaProblem, Evidence, StickProblem};
use diln::corpus::{Corpus, Document, Vocabulary};
use diln::mat::Mat;
use diln::model::{DocumentState, GlobalState, Mode};
use diln::rng::stream_rng;
use diln::vb::{compute_bound, fit_document, u_gradient, FitConfig, FitContext, Priors};
use rand::Rng;

pub struct Instance {
    pub docs: Vec<Document>,
    pub global: GlobalState,
    pub states: Vec<DocumentState>,
    pub priors: Priors,
}

impl Instance {
    pub fn bound(&self) -> f64 {
        compute_bound(&self.docs, &self.states, &self.global, &self.priors)
            .unwrap()
            .total
    }

    pub fn bound_with(&self, global: &GlobalState, states: &[DocumentState]) -> f64 {
        compute_bound(&self.docs, states, global, &self.priors)
            .unwrap()
            .total
    }

    pub fn corpus(&self) -> Corpus {
        Corpus::new(
            Vocabulary::synthetic(self.global.vocab_size()),
            self.docs.clone(),
        )
        .unwrap()
    }
}

/// Random small model with partially fitted document states and random
/// document locations.
pub fn random_instance(seed: u64, t: usize, v: usize, d: usize, m: usize, mode: Mode) -> Instance {
    let mut rng = stream_rng(seed, 99);
    let mut gamma = Mat::zeros(t, v);
    for g in gamma.as_mut_slice() {
        *g = rng.random_range(0.2..3.0);
    }
    let mut sticks: Vec<f64> = (0..t).map(|_| rng.random_range(0.15..0.7)).collect();
    sticks[t - 1] = 1.0;
    let mut ell = Mat::zeros(t, d);
    for x in ell.as_mut_slice() {
        *x = rng.random_range(-0.6..0.6);
    }
    let global = GlobalState {
        gamma,
        sticks,
        ell,
        alpha: rng.random_range(0.5..3.0),
        beta: rng.random_range(1.0..6.0),
        mode,
    };
    let docs: Vec<Document> = (0..m)
        .map(|_| {
            let n = rng.random_range(3..15);
            let tokens: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
            Document::from_tokens(&tokens).unwrap()
        })
        .collect();
    let fit = FitConfig {
        inner_iters: 3,
        ..FitConfig::default()
    };
    let states = docs
        .iter()
        .map(|doc| {
            let mut s = fit_document(doc, &global, &fit).unwrap();
            for u in &mut s.u {
                *u = rng.random_range(-0.8..0.8);
            }
            for a in &mut s.a {
                *a *= rng.random_range(0.8..1.25);
            }
            s
        })
        .collect();
    let priors = Priors {
        gamma0: 0.3,
        location_var: rng.random_range(0.2..0.9),
        tau1: 1.0,
        tau2: 1e-3,
        kappa1: rng.random_range(1.0..3.0),
        kappa2: 1e-3,
    };
    Instance {
        docs,
        global,
        states,
        priors,
    }
}

/// `‖analytic − numeric‖∞ / max(‖numeric‖∞, 1)`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(1.0, f64::max);
    diff / scale
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

const H: f64 = 1e-6;

/// Largest relative errors of each analytic derivative against central
/// differences of the full bound: (u, V, ℓ, β, stick Hessian vs gradient).
pub struct GradientReport {
    pub u: f64,
    pub sticks: f64,
    pub ell: f64,
    pub beta: f64,
    pub stick_hessian: f64,
}

impl GradientReport {
    pub fn worst_gradient(&self) -> f64 {
        self.u.max(self.sticks).max(self.ell).max(self.beta)
    }
}

pub fn gradient_check(inst: &Instance) -> GradientReport {
    let g = &inst.global;
    let ctx = FitContext::new(g);

    // document locations, one document at a time
    let mut u_err: f64 = 0.0;
    if g.mode == Mode::Diln {
        for m in 0..inst.states.len() {
            let st = &inst.states[m];
            let analytic = u_gradient(&st.u, &st.expected_z(), &ctx);
            let numeric: Vec<f64> = (0..st.u.len())
                .map(|j| {
                    central(
                        |x| {
                            let mut states = inst.states.clone();
                            states[m].u[j] = x;
                            inst.bound_with(g, &states)
                        },
                        st.u[j],
                        1e-5,
                    )
                })
                .collect();
            u_err = u_err.max(rel_err(&analytic, &numeric));
        }
    }

    let ev = Evidence::from_states(&inst.states, 1.0);
    let data = ev.stick_data(g);
    let sp = StickProblem {
        data: &data,
        n_docs: ev.effective_docs(),
        alpha: g.alpha,
        beta: g.beta,
    };
    let t = g.n_topics();
    let analytic = sp.gradient(&g.sticks);
    let numeric: Vec<f64> = (0..t - 1)
        .map(|i| {
            central(
                |x| {
                    let mut gg = g.clone();
                    gg.sticks[i] = x;
                    inst.bound_with(&gg, &inst.states)
                },
                g.sticks[i],
                H,
            )
        })
        .collect();
    let stick_err = if t > 1 {
        rel_err(&analytic, &numeric)
    } else {
        0.0
    };

    let hess = sp.hessian(&g.sticks);
    let mut hess_err: f64 = 0.0;
    for i in 0..t - 1 {
        let hh = 1e-5;
        let mut hi = g.sticks.clone();
        let mut lo = g.sticks.clone();
        hi[i] += hh;
        lo[i] -= hh;
        let (gh, gl) = (sp.gradient(&hi), sp.gradient(&lo));
        let col: Vec<f64> = gh
            .iter()
            .zip(&gl)
            .map(|(a, b)| (a - b) / (2.0 * hh))
            .collect();
        let a: Vec<f64> = (0..t - 1).map(|r| hess[(r, i)]).collect();
        hess_err = hess_err.max(rel_err(&a, &col));
    }

    let p = g.weights();
    let mut ell_err: f64 = 0.0;
    if g.mode == Mode::Diln {
        for k in 0..t {
            let analytic = ell_gradient(
                &ev,
                k,
                g.ell.row(k),
                inst.priors.location_var,
                g.beta * p[k],
            );
            let numeric: Vec<f64> = (0..g.latent_dim())
                .map(|j| {
                    central(
                        |x| {
                            let mut gg = g.clone();
                            gg.ell.set(k, j, x);
                            inst.bound_with(&gg, &inst.states)
                        },
                        g.ell.get(k, j),
                        H,
                    )
                })
                .collect();
            ell_err = ell_err.max(rel_err(&analytic, &numeric));
        }
    }

    let bp = BetaProblem {
        weights: &p,
        data: &data,
        n_docs: ev.effective_docs(),
        kappa1: inst.priors.kappa1,
        kappa2: inst.priors.kappa2,
    };
    let numeric = central(
        |x| {
            let mut gg = g.clone();
            gg.beta = x;
            inst.bound_with(&gg, &inst.states)
        },
        g.beta,
        H,
    );
    let beta_err = rel_err(&[bp.gradient(g.beta)], &[numeric]);

    GradientReport {
        u: u_err,
        sticks: stick_err,
        ell: ell_err,
        beta: beta_err,
        stick_hessian: hess_err,
    }
}
