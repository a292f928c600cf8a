//! Run configuration: a line-oriented `key = value` file overridden by
//! command-line settings. `gamma0` and `kappa` accept comma-separated lists,
//! which expand into a sweep of runs.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::batch::{BatchTrainConfig, InitOptions};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, Pooling};
use crate::model::{Mode, ModelConfig};
use crate::stochastic::{StepSchedule, StochasticConfig, UpdateSelection};
use crate::vb::FitConfig;

pub const BATCH_GAMMA0_SWEEP: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 1.0];
pub const STOCHASTIC_GAMMA0: f64 = 0.01;
pub const KAPPA_SWEEP: [f64; 3] = [0.6, 0.75, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trainer {
    Batch,
    Stochastic,
}

impl FromStr for Trainer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(Trainer::Batch),
            "stochastic" => Ok(Trainer::Stochastic),
            other => Err(Error::config(
                "trainer",
                format!("expected batch|stochastic, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub output: PathBuf,
    pub trainer: Trainer,
    pub mode: Mode,
    pub seed: u64,

    pub truncation: usize,
    pub latent_dim: usize,
    pub location_var: f64,
    /// `None` selects the trainer's default (a sweep for batch).
    pub gamma0: Option<Vec<f64>>,
    pub tau1: f64,
    pub tau2: f64,
    pub kappa1: f64,
    pub kappa2: f64,

    pub inner_iters: Option<usize>,
    pub inner_tol: f64,
    pub u_steps: usize,

    pub rel_tol: f64,
    pub max_iters: usize,
    pub ell_steps: usize,
    pub v_steps: usize,

    pub zeta: f64,
    pub kappa: Option<Vec<f64>>,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub init_docs: Option<usize>,

    /// Held-out documents taken from the corpus for evaluation during and after training.
    pub heldout: usize,
    pub n_samples: usize,
    pub pooling: Pooling,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            corpus: None,
            vocab: None,
            output: PathBuf::from("out"),
            trainer: Trainer::Batch,
            mode: model.mode,
            seed: 0,
            truncation: model.truncation,
            latent_dim: model.latent_dim,
            location_var: model.location_var,
            gamma0: None,
            tau1: model.tau1,
            tau2: model.tau2,
            kappa1: model.kappa1,
            kappa2: model.kappa2,
            inner_iters: None,
            inner_tol: FitConfig::default().tol,
            u_steps: FitConfig::default().u_steps,
            rel_tol: 1e-3,
            max_iters: 100,
            ell_steps: 20,
            v_steps: 5,
            zeta: 25.0,
            kappa: None,
            batch_size: 250,
            epochs: 1,
            eval_every: 10,
            init_docs: None,
            heldout: 0,
            n_samples: crate::eval::DEFAULT_SAMPLES,
            pooling: Pooling::Corpus,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let list: Vec<f64> = value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect::<Result<_>>()?;
    if list.is_empty() {
        return Err(Error::config(key, "empty list"));
    }
    Ok(list)
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key = value, got `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "corpus" => self.corpus = Some(PathBuf::from(value)),
            "vocab" => self.vocab = Some(PathBuf::from(value)),
            "output" => self.output = PathBuf::from(value),
            "trainer" => self.trainer = value.parse()?,
            "mode" => self.mode = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "truncation" => self.truncation = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "location_var" => self.location_var = parse(key, value)?,
            "gamma0" => self.gamma0 = Some(parse_list(key, value)?),
            "tau1" => self.tau1 = parse(key, value)?,
            "tau2" => self.tau2 = parse(key, value)?,
            "kappa1" => self.kappa1 = parse(key, value)?,
            "kappa2" => self.kappa2 = parse(key, value)?,
            "inner_iters" => self.inner_iters = Some(parse(key, value)?),
            "inner_tol" => self.inner_tol = parse(key, value)?,
            "u_steps" => self.u_steps = parse(key, value)?,
            "rel_tol" => self.rel_tol = parse(key, value)?,
            "max_iters" => self.max_iters = parse(key, value)?,
            "ell_steps" => self.ell_steps = parse(key, value)?,
            "v_steps" => self.v_steps = parse(key, value)?,
            "zeta" => self.zeta = parse(key, value)?,
            "kappa" => self.kappa = Some(parse_list(key, value)?),
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "init_docs" => self.init_docs = Some(parse(key, value)?),
            "heldout" => self.heldout = parse(key, value)?,
            "n_samples" => self.n_samples = parse(key, value)?,
            "pooling" => self.pooling = value.parse()?,
            other => return Err(Error::config(other, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` text in order; later lines win.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path).map_err(Error::file(path))?)?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides such as those given with `--set`.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::config(o, "override must look like key=value"))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn gamma0_values(&self) -> Vec<f64> {
        match (&self.gamma0, self.trainer) {
            (Some(v), _) => v.clone(),
            (None, Trainer::Batch) => BATCH_GAMMA0_SWEEP.to_vec(),
            (None, Trainer::Stochastic) => vec![STOCHASTIC_GAMMA0],
        }
    }

    pub fn kappa_values(&self) -> Vec<f64> {
        match (&self.kappa, self.trainer) {
            (Some(v), _) => v.clone(),
            (None, Trainer::Stochastic) => KAPPA_SWEEP.to_vec(),
            (None, Trainer::Batch) => vec![StepSchedule::default().kappa],
        }
    }

    /// One fully specified run per `(γ₀, κ)` combination (κ only varies for
    /// the stochastic trainer).
    pub fn sweep(&self) -> Vec<RunConfig> {
        let kappas = match self.trainer {
            Trainer::Batch => vec![None],
            Trainer::Stochastic => self.kappa_values().into_iter().map(Some).collect(),
        };
        let mut runs = Vec::new();
        for g in self.gamma0_values() {
            for k in &kappas {
                let mut r = self.clone();
                r.gamma0 = Some(vec![g]);
                r.kappa = k.map(|k| vec![k]);
                runs.push(r);
            }
        }
        runs
    }

    fn single(&self, name: &str, values: Vec<f64>) -> Result<f64> {
        match values.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::config(
                name,
                "a sweep must be expanded before building a run",
            )),
        }
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let m = ModelConfig {
            truncation: self.truncation,
            latent_dim: self.latent_dim,
            location_var: self.location_var,
            gamma0: self.single("gamma0", self.gamma0_values())?,
            tau1: self.tau1,
            tau2: self.tau2,
            kappa1: self.kappa1,
            kappa2: self.kappa2,
            mode: self.mode,
        };
        m.validate()?;
        Ok(m)
    }

    fn fit(&self, default_iters: usize) -> FitConfig {
        FitConfig {
            inner_iters: self.inner_iters.unwrap_or(default_iters),
            tol: self.inner_tol,
            u_steps: self.u_steps,
        }
    }

    pub fn batch(&self) -> Result<BatchTrainConfig> {
        let cfg = BatchTrainConfig {
            model: self.model()?,
            fit: self.fit(FitConfig::default().inner_iters),
            init: InitOptions::default(),
            rel_tol: self.rel_tol,
            max_iters: self.max_iters,
            seed: self.seed,
            ell_steps: self.ell_steps,
            v_steps: self.v_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn stochastic(&self) -> Result<StochasticConfig> {
        let defaults = StochasticConfig::default();
        Ok(StochasticConfig {
            model: self.model()?,
            fit: self.fit(defaults.fit.inner_iters),
            init: InitOptions::default(),
            schedule: StepSchedule::new(self.zeta, self.single("kappa", self.kappa_values())?)?,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            updates: UpdateSelection::default(),
            init_docs: self.init_docs,
            eval_every: Some(self.eval_every).filter(|&e| e > 0),
        })
    }

    pub fn eval(&self) -> Result<EvalConfig> {
        if self.n_samples == 0 {
            return Err(Error::config("n_samples", "must be >= 1"));
        }
        Ok(EvalConfig {
            fit: self.fit(FitConfig::default().inner_iters),
            n_samples: self.n_samples,
            seed: self.seed,
            pooling: self.pooling,
        })
    }

    /// Short directory label for a run inside a sweep.
    pub fn label(&self) -> String {
        let mut s = format!("gamma0={}", self.gamma0_values()[0]);
        if self.trainer == Trainer::Stochastic {
            s.push_str(&format!("_kappa={}", self.kappa_values()[0]));
        }
        s
    }
}
