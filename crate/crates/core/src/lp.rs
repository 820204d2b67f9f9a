//! Label propagation baseline: `F <- alpha S F + (1 - alpha) Y` with
//! `S = D^{-1/2} W D^{-1/2}`, starting from `F = Y`.

use crate::config::SolverConfig;
use crate::data::{EpisodeData, LabelMatrix};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::mbo::{check_episode, predict_labels, prepare_graph};

#[derive(Debug, Clone)]
pub struct LpOutput {
    pub scores: LabelMatrix,
    pub iterations: usize,
    /// `|F_{t+1} - F_t|_inf` per iteration.
    pub residuals: Vec<f64>,
}

/// One-hot label matrix for the first `labels.len()` of `m` vertices.
pub fn one_hot_labels(m: usize, classes: usize, labels: &[usize]) -> LabelMatrix {
    let mut y = LabelMatrix::zeros(m, classes);
    for (i, &l) in labels.iter().enumerate() {
        y.set(i, l, 1.0);
    }
    y
}

pub fn label_propagation(
    graph: &SparseGraph,
    labels: &LabelMatrix,
    alpha: f64,
    iters: usize,
    tol: f64,
) -> Result<LpOutput> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param(format!("alpha = {alpha} must be in (0, 1)")));
    }
    if iters == 0 {
        return Err(Error::param("iters must be >= 1"));
    }
    if labels.rows() != graph.len() {
        return Err(Error::param("label matrix rows must match graph size"));
    }
    if let Some(vertex) = graph.degrees().iter().position(|&d| d <= 0.0) {
        return Err(Error::IsolatedVertex { vertex });
    }
    let m = graph.len();
    let c = labels.cols();
    let inv_sqrt: Vec<f64> = graph.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();

    let y = labels.as_slice();
    let mut f = labels.clone();
    let mut next = LabelMatrix::zeros(m, c);
    let mut residuals = Vec::new();
    for _ in 0..iters {
        {
            let src = f.as_slice();
            let dst = next.as_mut_slice();
            for i in 0..m {
                let row = &mut dst[i * c..(i + 1) * c];
                row.iter_mut().for_each(|v| *v = 0.0);
                for (j, w) in graph.neighbors(i) {
                    let s = w * inv_sqrt[i] * inv_sqrt[j];
                    for k in 0..c {
                        row[k] += s * src[j * c + k];
                    }
                }
                for k in 0..c {
                    row[k] = alpha * row[k] + (1.0 - alpha) * y[i * c + k];
                }
            }
        }
        let delta = next.max_abs_diff(&f);
        std::mem::swap(&mut f, &mut next);
        residuals.push(delta);
        if !delta.is_finite() {
            return Err(Error::Numerical("label propagation diverged".into()));
        }
        if delta < tol {
            break;
        }
    }
    Ok(LpOutput {
        scores: f,
        iterations: residuals.len(),
        residuals,
    })
}

/// `|F - (alpha S F + (1 - alpha) Y)|_inf`.
pub fn fixed_point_residual(graph: &SparseGraph, f: &LabelMatrix, y: &LabelMatrix, alpha: f64) -> f64 {
    let inv_sqrt: Vec<f64> = graph.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut worst = 0.0f64;
    for i in 0..graph.len() {
        for k in 0..f.cols() {
            let sf: f64 = graph
                .neighbors(i)
                .map(|(j, w)| w * inv_sqrt[i] * inv_sqrt[j] * f.get(j, k))
                .sum();
            let target = alpha * sf + (1.0 - alpha) * y.get(i, k);
            worst = worst.max((f.get(i, k) - target).abs());
        }
    }
    worst
}

/// Label propagation on an episode's normalized (optionally calibrated)
/// kNN graph; returns query scores and predictions.
pub fn label_propagation_episode(
    episode: &EpisodeData,
    config: &SolverConfig,
    calibrate_queries: bool,
) -> Result<(LabelMatrix, Vec<usize>, SparseGraph)> {
    config.validate()?;
    check_episode(episode)?;
    let (ep, graph) = prepare_graph(episode, config, calibrate_queries)?;
    let y = one_hot_labels(ep.len(), ep.classes(), &ep.support_labels());
    let out = label_propagation(&graph, &y, config.lp_alpha, config.lp_max_iter, config.lp_tol)?;
    let q = out.scores.slice_rows(ep.query_offset(), ep.len());
    let pred = predict_labels(&q);
    Ok((q, pred, graph))
}
