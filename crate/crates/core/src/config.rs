// SPDX-License-Identifier: MIT OR Apache-2.0

//! Hyperparameters and the `key = value` config file format.

use std::fs;
use std::path::Path;

use crate::error::{GloceError, Result};
use crate::gate::{validate_tolerances, GammaSpread};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tau2Mode {
    /// `tau2 = tau1 / 2`.
    #[default]
    HalfTau1,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub d: usize,
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
    pub eta: f64,
    pub tau1: f64,
    pub u: f64,
    pub tau2_mode: Tau2Mode,
    /// Used only when `tau2_mode` is `Explicit`.
    pub tau2: f64,
    pub seed: u64,
    pub gamma_spread: GammaSpread,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            d: 64,
            r1: 2,
            r2: 16,
            r3: 1,
            eta: 1.0,
            tau1: 1.5,
            u: 0.99,
            tau2_mode: Tau2Mode::HalfTau1,
            tau2: 0.75,
            seed: 0,
            gamma_spread: GammaSpread::Variance,
        }
    }
}

impl Config {
    /// Preset for strong erasure (larger mapping scale).
    pub fn strong() -> Self {
        Config {
            eta: 5.0,
            ..Config::default()
        }
    }

    pub fn effective_tau2(&self) -> f64 {
        match self.tau2_mode {
            Tau2Mode::HalfTau1 => self.tau1 / 2.0,
            Tau2Mode::Explicit => self.tau2,
        }
    }

    /// Checks the hyperparameters against embedding dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(GloceError::InvalidConfig(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        for (name, r) in [("r1", self.r1), ("r2", self.r2), ("r3", self.r3)] {
            if r == 0 || r > dim {
                return Err(GloceError::InvalidConfig(format!(
                    "{name} = {r} must lie in 1..={dim}"
                )));
            }
        }
        validate_tolerances(self.tau1, self.effective_tau2(), self.u)
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || GloceError::InvalidConfig(format!("bad value `{value}` for `{key}`"));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let real = |v: &str| v.parse::<f64>().map_err(|_| bad());
        match key {
            "d" => self.d = int(value)?,
            "r1" => self.r1 = int(value)?,
            "r2" => self.r2 = int(value)?,
            "r3" => self.r3 = int(value)?,
            "eta" => self.eta = real(value)?,
            "tau1" => self.tau1 = real(value)?,
            "u" => self.u = real(value)?,
            "tau2" => {
                self.tau2 = real(value)?;
                self.tau2_mode = Tau2Mode::Explicit;
            }
            "tau2_mode" => {
                self.tau2_mode = match value {
                    "half-tau1" => Tau2Mode::HalfTau1,
                    "explicit" => Tau2Mode::Explicit,
                    _ => return Err(bad()),
                }
            }
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "gamma_spread" => {
                self.gamma_spread = match value {
                    "variance" => GammaSpread::Variance,
                    "stddev" => GammaSpread::StdDev,
                    _ => return Err(bad()),
                }
            }
            _ => {
                return Err(GloceError::InvalidConfig(format!("unknown key `{key}`")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                GloceError::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
