//! Method dispatch for single-episode inference.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::config::SolverConfig;
use crate::data::{ClassPrior, EpisodeData, LabelMatrix};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::lp::label_propagation_episode;
use crate::mbo::{poisson_mbo_with, MboIteration};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Calibrated Poisson MBO on transferred features.
    Ptn,
    /// Calibrated Poisson MBO on the pretrained features.
    Dpn,
    /// Poisson MBO without calibration.
    Poisson,
    /// Label propagation.
    Lp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ptn => "ptn",
            Method::Dpn => "dpn",
            Method::Poisson => "poisson",
            Method::Lp => "lp",
        }
    }

    pub fn calibrates(self) -> bool {
        matches!(self, Method::Ptn | Method::Dpn)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ptn" => Ok(Method::Ptn),
            "dpn" => Ok(Method::Dpn),
            "poisson" | "poisson-raw" => Ok(Method::Poisson),
            "lp" => Ok(Method::Lp),
            other => Err(Error::param(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub query_scores: LabelMatrix,
    pub predictions: Vec<usize>,
    /// Poisson propagation steps (zero for label propagation).
    pub propagation_steps: usize,
    pub diagnostics: Vec<MboIteration>,
    pub graph: SparseGraph,
}

/// Runs `method` on one episode. `calibrate` overrides the method's default
/// calibration setting when given.
pub fn infer(
    episode: &EpisodeData,
    config: &SolverConfig,
    method: Method,
    prior: &ClassPrior,
    calibrate: Option<bool>,
) -> Result<Inference> {
    let calibrate = calibrate.unwrap_or(method.calibrates());
    if prior.len() != episode.classes() {
        return Err(Error::param(format!(
            "prior has {} entries for {} classes",
            prior.len(),
            episode.classes()
        )));
    }
    match method {
        Method::Lp => {
            let (query_scores, predictions, graph) =
                label_propagation_episode(episode, config, calibrate)?;
            Ok(Inference {
                query_scores,
                predictions,
                propagation_steps: 0,
                diagnostics: Vec::new(),
                graph,
            })
        }
        _ => {
            let (out, graph) = poisson_mbo_with(episode, config, prior, calibrate)?;
            Ok(Inference {
                query_scores: out.query_scores,
                predictions: out.predictions,
                propagation_steps: out.propagation_steps,
                diagnostics: out.diagnostics,
                graph,
            })
        }
    }
}
