//! Solver hyperparameters and the flat `key=value` config file format.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Weight of the label source term in the graph-cut energy.
    pub mu: f64,
    /// Outer MBO iterations.
    pub m1: usize,
    /// Gradient steps per outer iteration.
    pub m2: usize,
    /// Volume-constraint updates per outer iteration.
    pub m3: usize,
    /// Time step of the class reweighting update.
    pub phi: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub knn_k: usize,
    /// Cap on Poisson propagation steps.
    pub tp_max: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the KL term in the transfer loss.
    pub lambda: f64,
    pub seed: u64,
    pub lp_alpha: f64,
    pub lp_max_iter: usize,
    pub lp_tol: f64,
    /// Re-normalize queries after bias calibration (off by default).
    pub renormalize_queries: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mu: 1.5,
            m1: 20,
            m2: 40,
            m3: 100,
            phi: 10.0,
            clip_lo: 0.5,
            clip_hi: 1.0,
            knn_k: 30,
            tp_max: 100,
            tau: 0.1,
            lambda: 1.0,
            seed: 0,
            lp_alpha: 0.99,
            lp_max_iter: 1000,
            lp_tol: 1e-6,
            renormalize_queries: false,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "mu",
    "m1",
    "m2",
    "m3",
    "phi",
    "clip_lo",
    "clip_hi",
    "knn_k",
    "tp_max",
    "tau",
    "lambda",
    "seed",
    "lp_alpha",
    "lp_max_iter",
    "lp_tol",
    "renormalize_queries",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::param(format!("bad value `{value}` for `{key}`")))
}

impl SolverConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "mu" => self.mu = parse_num(key, value)?,
            "m1" => self.m1 = parse_num(key, value)?,
            "m2" => self.m2 = parse_num(key, value)?,
            "m3" => self.m3 = parse_num(key, value)?,
            "phi" => self.phi = parse_num(key, value)?,
            "clip_lo" => self.clip_lo = parse_num(key, value)?,
            "clip_hi" => self.clip_hi = parse_num(key, value)?,
            "knn_k" => self.knn_k = parse_num(key, value)?,
            "tp_max" => self.tp_max = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "lp_alpha" => self.lp_alpha = parse_num(key, value)?,
            "lp_max_iter" => self.lp_max_iter = parse_num(key, value)?,
            "lp_tol" => self.lp_tol = parse_num(key, value)?,
            "renormalize_queries" => self.renormalize_queries = parse_num(key, value)?,
            other => return Err(Error::param(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::param(format!("config line {}: expected key=value", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = SolverConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let s = self;
        format!(
            "mu={}\nm1={}\nm2={}\nm3={}\nphi={}\nclip_lo={}\nclip_hi={}\nknn_k={}\ntp_max={}\n\
             tau={}\nlambda={}\nseed={}\nlp_alpha={}\nlp_max_iter={}\nlp_tol={}\nrenormalize_queries={}\n",
            s.mu,
            s.m1,
            s.m2,
            s.m3,
            s.phi,
            s.clip_lo,
            s.clip_hi,
            s.knn_k,
            s.tp_max,
            s.tau,
            s.lambda,
            s.seed,
            s.lp_alpha,
            s.lp_max_iter,
            s.lp_tol,
            s.renormalize_queries
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::param(m));
        if self.m1 == 0 || self.m2 == 0 || self.m3 == 0 || self.tp_max == 0 {
            return fail("iteration counts m1, m2, m3, tp_max must be >= 1");
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return fail("mu must be > 0");
        }
        if !(self.clip_lo < self.clip_hi) {
            return fail("clip_lo must be < clip_hi");
        }
        if self.clip_lo <= 0.0 {
            return fail("clip_lo must be > 0");
        }
        if !(self.phi >= 0.0 && self.phi.is_finite()) {
            return fail("phi must be >= 0");
        }
        if self.knn_k == 0 {
            return fail("knn_k must be >= 1");
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail("tau must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be >= 0");
        }
        if !(self.lp_alpha > 0.0 && self.lp_alpha < 1.0) {
            return fail("lp_alpha must be in (0, 1)");
        }
        if self.lp_max_iter == 0 {
            return fail("lp_max_iter must be >= 1");
        }
        if !(self.lp_tol > 0.0) {
            return fail("lp_tol must be > 0");
        }
        Ok(())
    }
}
