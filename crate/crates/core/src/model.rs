//! Model configuration and variational state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::stick_weights;
use crate::mat::{dot, Mat};

/// Exponent clamp applied to `ℓ̂_kᵀû` before exponentiation.
pub const DOT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Diln,
    Hdp,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diln" => Ok(Mode::Diln),
            "hdp" => Ok(Mode::Hdp),
            other => Err(Error::config(
                "mode",
                format!("expected diln|hdp, got `{other}`"),
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Diln => "diln",
            Mode::Hdp => "hdp",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub truncation: usize,
    pub latent_dim: usize,
    pub location_var: f64,
    pub gamma0: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            truncation: 200,
            latent_dim: 20,
            location_var: 1.0 / 20.0,
            gamma0: 0.5,
            tau1: 1.0,
            tau2: 1e-3,
            kappa1: 1.0,
            kappa2: 1e-3,
            mode: Mode::Diln,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation < 1 {
            return Err(Error::config("truncation", "must be >= 1"));
        }
        if self.latent_dim < 1 {
            return Err(Error::config("latent_dim", "must be >= 1"));
        }
        for (name, v) in [
            ("location_var", self.location_var),
            ("gamma0", self.gamma0),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Corpus-level variational parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    /// T × V topic Dirichlet parameters.
    pub gamma: Mat,
    /// Stick point estimates; the last entry is fixed at 1.
    pub sticks: Vec<f64>,
    /// T × d topic locations.
    pub ell: Mat,
    pub alpha: f64,
    pub beta: f64,
    pub mode: Mode,
}

impl GlobalState {
    pub fn n_topics(&self) -> usize {
        self.sticks.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.gamma.cols()
    }

    pub fn latent_dim(&self) -> usize {
        self.ell.cols()
    }

    /// Top-level weights `p_k` from the sticks.
    pub fn weights(&self) -> Vec<f64> {
        stick_weights(&self.sticks)
    }

    /// `ln` of the prior rate of `Z_k` for a document at `u`:
    /// `−clamp(ℓ̂_kᵀu)` under DILN, `0` under HDP.
    #[inline]
    pub fn ln_rate(&self, k: usize, u: &[f64]) -> f64 {
        match self.mode {
            Mode::Diln => -dot(self.ell.row(k), u).clamp(-DOT_CLAMP, DOT_CLAMP),
            Mode::Hdp => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.n_topics();
        if t == 0 || self.gamma.rows() != t || self.ell.rows() != t {
            return Err(Error::Validation(
                "inconsistent global state dimensions".into(),
            ));
        }
        if self
            .gamma
            .as_slice()
            .iter()
            .any(|g| !(*g > 0.0 && g.is_finite()))
        {
            return Err(Error::Validation(
                "topic parameters must be positive".into(),
            ));
        }
        if self.sticks[..t - 1].iter().any(|v| !(*v > 0.0 && *v < 1.0)) || self.sticks[t - 1] != 1.0
        {
            return Err(Error::Validation(
                "sticks must lie in (0,1) with last = 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::Validation("alpha and beta must be positive".into()));
        }
        Ok(())
    }
}

/// Per-document variational parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentState {
    /// U × T indicator probabilities, one row per unique term.
    pub phi: Mat,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub xi: f64,
    pub u: Vec<f64>,
}

impl DocumentState {
    pub fn n_topics(&self) -> usize {
        self.a.len()
    }

    /// `E_Q[Z_k] = a_k / b_k`.
    pub fn expected_z(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a / b).collect()
    }

    /// `E_Q[ln Z_k] = ψ(a_k) − ln b_k`.
    pub fn expected_log_z(&self) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(&a, &b)| crate::special::digamma(a) - b.ln())
            .collect()
    }

    /// Normalized expected proportions `E[Z_k] / Σ_j E[Z_j]`.
    pub fn proportions(&self) -> Vec<f64> {
        let ez = self.expected_z();
        let total: f64 = ez.iter().sum();
        ez.into_iter().map(|z| z / total).collect()
    }
}
