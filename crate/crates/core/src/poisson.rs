//! Graph Poisson learning.
//!
//! Solves `L G = A^T` subject to `sum_i d_i G_ic = 0` for every class `c`,
//! where row `s` of `A^T` is `y_s - ybar` for labeled vertices and zero
//! elsewhere. The fixed-point update is `G <- G + D^{-1}(A^T - L G)`.

use nalgebra::{DMatrix, DVector};

use crate::data::{EpisodeData, LabelMatrix};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;

/// Point sources `A^T` (m x C) and the mean label vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMatrix {
    pub entries: LabelMatrix,
    pub mean_label: Vec<f64>,
}

impl SourceMatrix {
    /// Sources for `m` vertices where the first `labels.len()` are labeled.
    pub fn from_labels(m: usize, classes: usize, labels: &[usize]) -> Self {
        let mut entries = LabelMatrix::zeros(m, classes);
        let mut mean_label = vec![0.0; classes];
        for &l in labels {
            mean_label[l] += 1.0;
        }
        let n = labels.len().max(1) as f64;
        mean_label.iter_mut().for_each(|v| *v /= n);
        for (s, &l) in labels.iter().enumerate() {
            let row = entries.row_mut(s);
            for (c, v) in row.iter_mut().enumerate() {
                *v = if c == l { 1.0 } else { 0.0 } - mean_label[c];
            }
        }
        SourceMatrix {
            entries,
            mean_label,
        }
    }

    pub fn rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn classes(&self) -> usize {
        self.entries.cols()
    }
}

pub fn build_source(episode: &EpisodeData) -> SourceMatrix {
    SourceMatrix::from_labels(episode.len(), episode.classes(), &episode.support_labels())
}

/// Random-walk mixing time used as the number of propagation steps.
///
/// Iterates `sp <- W D^{-1} sp` from the indicator of the first
/// `labeled_count` vertices until `|sp - W1/(1^T W 1)|_inf <= 1/m`,
/// returning the first step count meeting the bound, or `tp_max`.
pub fn mixing_time(graph: &SparseGraph, labeled_count: usize, tp_max: usize) -> usize {
    let m = graph.len();
    let deg = graph.degrees();
    let total: f64 = deg.iter().sum();
    let target: Vec<f64> = deg.iter().map(|d| d / total).collect();
    let bound = 1.0 / m as f64;

    let mut sp: Vec<f64> = (0..m).map(|i| if i < labeled_count { 1.0 } else { 0.0 }).collect();
    let mut scaled = vec![0.0; m];
    for tp in 1..=tp_max {
        for i in 0..m {
            scaled[i] = sp[i] / deg[i];
        }
        sp = graph.apply_weights_vec(&scaled);
        let dist = sp
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if dist <= bound {
            return tp;
        }
    }
    tp_max
}

fn check_dims(graph: &SparseGraph, source: &SourceMatrix) -> Result<()> {
    if source.rows() != graph.len() {
        return Err(Error::param(format!(
            "source has {} rows, graph has {} vertices",
            source.rows(),
            graph.len()
        )));
    }
    Ok(())
}

/// One relaxed update `G <- G + omega D^{-1}(A^T - L G)`.
fn relax_step(
    graph: &SparseGraph,
    source: &SourceMatrix,
    g: &mut LabelMatrix,
    lg: &mut LabelMatrix,
    omega: f64,
) {
    graph.apply_laplacian_into(g, lg);
    let c = g.cols();
    let a = source.entries.as_slice();
    let lgs = lg.as_slice();
    let deg = graph.degrees();
    for (idx, v) in g.as_mut_slice().iter_mut().enumerate() {
        *v += omega * (a[idx] - lgs[idx]) / deg[idx / c];
    }
}

/// Runs exactly `steps` Poisson updates starting from `G = 0`.
pub fn poisson_iterate(
    graph: &SparseGraph,
    source: &SourceMatrix,
    steps: usize,
) -> Result<LabelMatrix> {
    check_dims(graph, source)?;
    if steps == 0 {
        return Err(Error::param("steps must be >= 1"));
    }
    let mut g = LabelMatrix::zeros(graph.len(), source.classes());
    let mut lg = g.clone();
    for _ in 0..steps {
        relax_step(graph, source, &mut g, &mut lg, 1.0);
    }
    if !g.is_finite() {
        return Err(Error::Numerical("Poisson iteration diverged".into()));
    }
    Ok(g)
}

/// Runs unit Poisson updates until the largest update falls below `tol` or
/// `max_steps` is reached. Returns the solution and the number of steps.
///
/// Oscillates on bipartite graphs; use [`poisson_converge`] there.
pub fn poisson_iterate_until(
    graph: &SparseGraph,
    source: &SourceMatrix,
    tol: f64,
    max_steps: usize,
) -> Result<(LabelMatrix, usize)> {
    iterate_until(graph, source, 1.0, tol, max_steps)
}

/// Iterates to a fixed point with the half-step relaxation
/// `G <- G + (1/2) D^{-1}(A^T - L G)`.
///
/// Same fixed point and conservation law as [`poisson_iterate`], but the
/// iteration matrix has spectrum in `[0, 1]`, so it also converges on
/// bipartite graphs where the unit step oscillates. Stops when the largest
/// update falls below `tol` or after `max_steps`; returns the solution and
/// the number of steps taken.
pub fn poisson_converge(
    graph: &SparseGraph,
    source: &SourceMatrix,
    tol: f64,
    max_steps: usize,
) -> Result<(LabelMatrix, usize)> {
    iterate_until(graph, source, 0.5, tol, max_steps)
}

fn iterate_until(
    graph: &SparseGraph,
    source: &SourceMatrix,
    omega: f64,
    tol: f64,
    max_steps: usize,
) -> Result<(LabelMatrix, usize)> {
    check_dims(graph, source)?;
    let mut g = LabelMatrix::zeros(graph.len(), source.classes());
    let mut lg = g.clone();
    let mut prev = g.clone();
    for step in 1..=max_steps {
        prev.as_mut_slice().copy_from_slice(g.as_slice());
        relax_step(graph, source, &mut g, &mut lg, omega);
        if !g.is_finite() {
            return Err(Error::Numerical("Poisson iteration diverged".into()));
        }
        if g.max_abs_diff(&prev) < tol {
            return Ok((g, step));
        }
    }
    Ok((g, max_steps))
}

/// Per-class `sum_i d_i G_ic`.
pub fn degree_weighted_sums(graph: &SparseGraph, g: &LabelMatrix) -> Vec<f64> {
    let deg = graph.degrees();
    (0..g.cols())
        .map(|c| (0..g.rows()).map(|i| deg[i] * g.get(i, c)).sum())
        .collect()
}

/// `|L G - A^T|_inf`.
pub fn residual(graph: &SparseGraph, source: &SourceMatrix, g: &LabelMatrix) -> f64 {
    graph.apply_laplacian(g).max_abs_diff(&source.entries)
}

pub const DENSE_ORACLE_MAX_VERTICES: usize = 500;

/// Direct solve of the constrained Poisson system via the bordered matrix
/// `[[L, d], [d^T, 0]]`. Refuses disconnected graphs, where the constraint
/// does not pin down a unique solution.
pub fn poisson_solve_dense(
    graph: &SparseGraph,
    source: &SourceMatrix,
    max_vertices: usize,
) -> Result<LabelMatrix> {
    check_dims(graph, source)?;
    let m = graph.len();
    if m > max_vertices {
        return Err(Error::param(format!(
            "dense oracle limited to {max_vertices} vertices, got {m}"
        )));
    }
    let components = graph.components();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    let deg = graph.degrees();
    let mut k = DMatrix::<f64>::zeros(m + 1, m + 1);
    for i in 0..m {
        k[(i, i)] = deg[i];
        for (j, w) in graph.neighbors(i) {
            k[(i, j)] -= w;
        }
        k[(i, m)] = deg[i];
        k[(m, i)] = deg[i];
    }
    let lu = k.lu();
    let classes = source.classes();
    let mut out = LabelMatrix::zeros(m, classes);
    for c in 0..classes {
        let mut rhs = DVector::<f64>::zeros(m + 1);
        for i in 0..m {
            rhs[i] = source.entries.get(i, c);
        }
        let x = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular bordered Laplacian".into()))?;
        for i in 0..m {
            out.set(i, c, x[i]);
        }
    }
    Ok(out)
}
