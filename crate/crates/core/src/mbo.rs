//! MBO refinement of the Poisson solution under class-volume constraints.
//!
//! After Poisson propagation the scores are scaled by `mu` and refined by
//! `m1` outer rounds. Each round takes `m2` explicit gradient steps on
//! `g^T L g - mu sum (y_i - ybar) . g(z_i)` with step `1 / max_i d_i`, fits
//! the class reweighting vector `r` so that the projected class fractions
//! approach the prior, and finally snaps every row to the nearest simplex
//! vertex of `G diag(r)`.

use std::io::Write;

use serde::Serialize;

use crate::calibration::calibrate;
use crate::config::SolverConfig;
use crate::data::{l2_normalize, ClassPrior, EpisodeData, LabelMatrix};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::poisson::{build_source, mixing_time, poisson_iterate, SourceMatrix};

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Closest vertex of the label simplex `{e_1, ..., e_C}` to `scores`.
pub fn simplex_project(scores: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    if !scores.is_empty() {
        out[argmax(scores)] = 1.0;
    }
    out
}

pub fn predict_labels(g: &LabelMatrix) -> Vec<usize> {
    (0..g.rows()).map(|i| argmax(g.row(i))).collect()
}

/// Class index of each row of `G diag(r)` after projection.
fn projected_assignments(g: &LabelMatrix, r: &[f64]) -> Vec<usize> {
    let mut buf = vec![0.0; g.cols()];
    (0..g.rows())
        .map(|i| {
            for (b, (x, w)) in buf.iter_mut().zip(g.row(i).iter().zip(r)) {
                *b = x * w;
            }
            argmax(&buf)
        })
        .collect()
}

fn fractions(assign: &[usize], classes: usize) -> Vec<f64> {
    let mut f = vec![0.0; classes];
    for &a in assign {
        f[a] += 1.0;
    }
    let n = assign.len() as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f
}

/// `m2` steps of `G <- G - dmx (L G - mu A^T)`.
pub fn mbo_gradient_steps(
    graph: &SparseGraph,
    source: &SourceMatrix,
    g: &LabelMatrix,
    mu: f64,
    dmx: f64,
    m2: usize,
) -> Result<LabelMatrix> {
    if m2 == 0 {
        return Err(Error::param("m2 must be >= 1"));
    }
    let mut g = g.clone();
    let mut lg = LabelMatrix::zeros(g.rows(), g.cols());
    let a = source.entries.as_slice();
    for _ in 0..m2 {
        graph.apply_laplacian_into(&g, &mut lg);
        for ((v, l), s) in g.as_mut_slice().iter_mut().zip(lg.as_slice()).zip(a) {
            *v -= dmx * (l - mu * s);
        }
    }
    if !g.is_finite() {
        return Err(Error::Numerical("MBO gradient steps produced non-finite scores".into()));
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeState {
    /// Class reweighting vector.
    pub r: Vec<f64>,
    /// Class fractions of `Proj_H(G diag(r))` for the final `r`.
    pub o_hat: Vec<f64>,
}

/// Fits `r` by `m3` clamped updates `r <- clamp(r + phi (o - o_hat))`,
/// starting from all ones.
pub fn volume_constraint_fit(
    g: &LabelMatrix,
    prior: &ClassPrior,
    phi: f64,
    clip_lo: f64,
    clip_hi: f64,
    m3: usize,
) -> Result<VolumeState> {
    if m3 == 0 {
        return Err(Error::param("m3 must be >= 1"));
    }
    if !(clip_lo < clip_hi) {
        return Err(Error::param("clip_lo must be < clip_hi"));
    }
    let classes = g.cols();
    if prior.len() != classes {
        return Err(Error::param(format!(
            "prior has {} classes, scores have {classes}",
            prior.len()
        )));
    }
    let o = prior.fractions();
    let mut r = vec![1.0; classes];
    for _ in 0..m3 {
        let o_hat = fractions(&projected_assignments(g, &r), classes);
        for c in 0..classes {
            r[c] = (r[c] + phi * (o[c] - o_hat[c])).clamp(clip_lo, clip_hi);
        }
    }
    let o_hat = fractions(&projected_assignments(g, &r), classes);
    Ok(VolumeState { r, o_hat })
}

/// One row of the convergence diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MboIteration {
    pub iteration: usize,
    pub o_hat: Vec<f64>,
    pub r: Vec<f64>,
    /// `g^T L g - mu <A^T, G>` after the projection.
    pub energy: f64,
}

#[derive(Debug, Clone)]
pub struct MboOutput {
    /// Final scores for all `m` vertices (one-hot rows).
    pub full: LabelMatrix,
    /// Query rows of `full`.
    pub query_scores: LabelMatrix,
    pub predictions: Vec<usize>,
    /// Poisson propagation steps used.
    pub propagation_steps: usize,
    pub diagnostics: Vec<MboIteration>,
}

pub(crate) fn source_energy(graph: &SparseGraph, source: &SourceMatrix, g: &LabelMatrix, mu: f64) -> f64 {
    let lin: f64 = source
        .entries
        .as_slice()
        .iter()
        .zip(g.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    graph.dirichlet_energy(g) - mu * lin
}

/// Poisson propagation followed by MBO refinement on a prebuilt graph.
///
/// The first `source` rows with nonzero entries are the labeled vertices;
/// `labeled_count` drives the mixing-time stop rule and `query_offset`
/// selects the returned rows.
pub fn poisson_mbo_on_graph(
    graph: &SparseGraph,
    source: &SourceMatrix,
    labeled_count: usize,
    query_offset: usize,
    config: &SolverConfig,
    prior: &ClassPrior,
) -> Result<MboOutput> {
    let steps = mixing_time(graph, labeled_count, config.tp_max);
    let mut g = poisson_iterate(graph, source, steps)?;

    let dmx = 1.0 / graph.max_degree();
    g.scale(config.mu);

    let classes = source.classes();
    let mut diagnostics = Vec::with_capacity(config.m1);
    for iteration in 0..config.m1 {
        g = mbo_gradient_steps(graph, source, &g, config.mu, dmx, config.m2)?;
        let vol = volume_constraint_fit(
            &g,
            prior,
            config.phi,
            config.clip_lo,
            config.clip_hi,
            config.m3,
        )?;
        let assign = projected_assignments(&g, &vol.r);
        let mut projected = LabelMatrix::zeros(g.rows(), classes);
        for (i, &a) in assign.iter().enumerate() {
            projected.set(i, a, 1.0);
        }
        g = projected;
        diagnostics.push(MboIteration {
            iteration,
            o_hat: vol.o_hat,
            r: vol.r,
            energy: source_energy(graph, source, &g, config.mu),
        });
    }

    let query_scores = g.slice_rows(query_offset, g.rows());
    let predictions = predict_labels(&query_scores);
    Ok(MboOutput {
        full: g,
        query_scores,
        predictions,
        propagation_steps: steps,
        diagnostics,
    })
}

/// Normalizes features, optionally calibrates queries, and builds the kNN
/// graph. `k` is capped at `m - 1` for tiny episodes.
pub fn prepare_graph(
    episode: &EpisodeData,
    config: &SolverConfig,
    calibrate_queries: bool,
) -> Result<(EpisodeData, SparseGraph)> {
    let mut ep = l2_normalize(episode)?;
    if calibrate_queries {
        ep = calibrate(&ep, config.renormalize_queries)?;
    }
    let k = config.knn_k.min(ep.len().saturating_sub(1));
    let graph = SparseGraph::knn_gaussian(&ep.vectors(), k)?;
    Ok((ep, graph))
}

pub(crate) fn check_episode(episode: &EpisodeData) -> Result<()> {
    let violations = crate::data::validate_episode(episode);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidEpisode(v.to_string()));
    }
    Ok(())
}

/// Full inference: normalize, calibrate (if requested), build the graph,
/// propagate, refine.
pub fn poisson_mbo_with(
    episode: &EpisodeData,
    config: &SolverConfig,
    prior: &ClassPrior,
    calibrate_queries: bool,
) -> Result<(MboOutput, SparseGraph)> {
    config.validate()?;
    check_episode(episode)?;
    let (ep, graph) = prepare_graph(episode, config, calibrate_queries)?;
    let source = build_source(&ep);
    let out = poisson_mbo_on_graph(
        &graph,
        &source,
        ep.num_support(),
        ep.query_offset(),
        config,
        prior,
    )?;
    Ok((out, graph))
}

/// Calibrated Poisson MBO inference on an episode.
pub fn poisson_mbo(
    episode: &EpisodeData,
    config: &SolverConfig,
    prior: &ClassPrior,
) -> Result<MboOutput> {
    poisson_mbo_with(episode, config, prior, true).map(|(o, _)| o)
}

pub fn write_diagnostics_csv<W: Write>(rows: &[MboIteration], out: &mut W) -> std::io::Result<()> {
    let classes = rows.first().map_or(0, |r| r.r.len());
    write!(out, "iteration,energy")?;
    for c in 0..classes {
        write!(out, ",o_hat{c}")?;
    }
    for c in 0..classes {
        write!(out, ",r{c}")?;
    }
    writeln!(out)?;
    for row in rows {
        write!(out, "{},{:?}", row.iteration, row.energy)?;
        for v in row.o_hat.iter().chain(&row.r) {
            write!(out, ",{v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn projection_examples() {
        assert_eq!(simplex_project(&[0.2, 0.7, 0.1]), vec![0.0, 1.0, 0.0]);
        assert_eq!(simplex_project(&[0.5, 0.5]), vec![1.0, 0.0]);
        assert_eq!(simplex_project(&[-3.0, -1.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn predict_examples() {
        let g = LabelMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![0.1, 0.1]]);
        assert_eq!(predict_labels(&g), vec![1, 0, 0]);
    }

    fn triangle() -> SparseGraph {
        SparseGraph::from_edges(3, &[(0, 1, 0.5), (1, 2, 1.0), (0, 2, 0.25)]).unwrap()
    }

    #[test]
    fn one_gradient_step_from_zero() {
        let g = triangle();
        let s = SourceMatrix::from_labels(3, 2, &[0, 1]);
        let dmx = 1.0 / g.max_degree();
        let out = mbo_gradient_steps(&g, &s, &LabelMatrix::zeros(3, 2), 1.5, dmx, 1).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                assert!((out.get(i, c) - dmx * 1.5 * s.entries.get(i, c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gradient_fixed_point_unchanged() {
        // G with L G = mu A^T: the scaled Poisson solution.
        let g = triangle();
        let s = SourceMatrix::from_labels(3, 2, &[0, 1]);
        let mut sol = crate::poisson::poisson_solve_dense(&g, &s, 100).unwrap();
        sol.scale(2.0);
        let out = mbo_gradient_steps(&g, &s, &sol, 2.0, 0.3, 5).unwrap();
        assert!(out.max_abs_diff(&sol) < 1e-12);
    }

    #[test]
    fn gradient_steps_match_hand_updates() {
        let g = triangle();
        let s = SourceMatrix::from_labels(3, 2, &[0, 1]);
        let w = g.dense_weights();
        let start = LabelMatrix::from_rows(&[vec![0.3, -0.1], vec![0.7, 0.2], vec![-0.4, 0.9]]);
        let dmx = 1.0 / g.max_degree();
        let mut h: Vec<Vec<f64>> = (0..3).map(|i| start.row(i).to_vec()).collect();
        for _ in 0..3 {
            let mut next = h.clone();
            for i in 0..3 {
                for c in 0..2 {
                    let mut lg = 0.0;
                    for j in 0..3 {
                        lg += w[i][j] * (h[i][c] - h[j][c]);
                    }
                    next[i][c] = h[i][c] - dmx * (lg - 1.5 * s.entries.get(i, c));
                }
            }
            h = next;
        }
        let out = mbo_gradient_steps(&g, &s, &start, 1.5, dmx, 3).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                assert!((out.get(i, c) - h[i][c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn volume_fit_fixed_point() {
        let g = LabelMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let v = volume_constraint_fit(&g, &ClassPrior::uniform(2), 10.0, 0.5, 1.0, 50).unwrap();
        assert_eq!(v.r, vec![1.0, 1.0]);
        assert_eq!(v.o_hat, vec![0.5, 0.5]);
    }

    #[test]
    fn volume_fit_zero_step() {
        let g = LabelMatrix::from_rows(&vec![vec![0.9, 0.8]; 4]);
        let v = volume_constraint_fit(&g, &ClassPrior::uniform(2), 0.0, 0.5, 1.0, 7).unwrap();
        assert_eq!(v.r, vec![1.0, 1.0]);
    }

    /// Independent replay of the reweighting loop.
    fn brute_volume_fit(rows: &[Vec<f64>], o: &[f64], phi: f64, lo: f64, hi: f64, m3: usize) -> (Vec<f64>, Vec<f64>) {
        let c = o.len();
        let frac = |r: &[f64]| {
            let mut f = vec![0.0; c];
            for row in rows {
                let mut best = 0;
                for k in 1..c {
                    if row[k] * r[k] > row[best] * r[best] {
                        best = k;
                    }
                }
                f[best] += 1.0;
            }
            f.iter().map(|x| x / rows.len() as f64).collect::<Vec<f64>>()
        };
        let mut r = vec![1.0; c];
        for _ in 0..m3 {
            let oh = frac(&r);
            for k in 0..c {
                r[k] = (r[k] + phi * (o[k] - oh[k])).max(lo).min(hi);
            }
        }
        let oh = frac(&r);
        (r, oh)
    }

    #[test]
    fn volume_fit_matches_replay() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![0.9, 0.8 + 0.015 * i as f64]).collect();
        let g = LabelMatrix::from_rows(&rows);
        for phi in [0.05, 1.0, 10.0] {
            let v = volume_constraint_fit(&g, &ClassPrior::uniform(2), phi, 0.5, 1.0, 100).unwrap();
            let (r, oh) = brute_volume_fit(&rows, &[0.5, 0.5], phi, 0.5, 1.0, 100);
            assert_eq!(v.r, r);
            assert_eq!(v.o_hat, oh);
        }
    }

    #[test]
    fn volume_fit_moves_toward_prior() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![0.9, 0.8 + 0.015 * i as f64]).collect();
        let g = LabelMatrix::from_rows(&rows);
        let o = [0.5, 0.5];
        let initial = fractions(&projected_assignments(&g, &[1.0, 1.0]), 2);
        assert_eq!(initial, vec![0.7, 0.3]);
        let v = volume_constraint_fit(&g, &ClassPrior::uniform(2), 0.05, 0.5, 1.0, 100).unwrap();
        let dist = |f: &[f64]| f.iter().zip(&o).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dist(&v.o_hat) < dist(&initial), "{:?} vs {:?}", v.o_hat, initial);
        assert!(v.r[0] < 1.0);
        assert!(v.r.iter().all(|&x| (0.5..=1.0).contains(&x)));
        let s: f64 = v.o_hat.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn large_step_jumps_between_clip_bounds() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![0.9, 0.8 + 0.015 * i as f64]).collect();
        let g = LabelMatrix::from_rows(&rows);
        let v = volume_constraint_fit(&g, &ClassPrior::uniform(2), 10.0, 0.5, 1.0, 100).unwrap();
        assert!(v.r.iter().all(|&x| x == 0.5 || x == 1.0), "{:?}", v.r);
    }

    #[test]
    fn identical_rows_flip_together() {
        // All rows (0.9, 0.8): r can only move both classes at once, so the
        // assignment flips wholesale and oscillates rather than splitting.
        let g = LabelMatrix::from_rows(&vec![vec![0.9, 0.8]; 6]);
        let v = volume_constraint_fit(&g, &ClassPrior::uniform(2), 10.0, 0.5, 1.0, 100).unwrap();
        assert!(v.o_hat == vec![1.0, 0.0] || v.o_hat == vec![0.0, 1.0]);
        assert!(v.r.iter().all(|&x| (0.5..=1.0).contains(&x)));
    }

    #[test]
    fn diagnostics_csv_layout() {
        let rows = vec![MboIteration {
            iteration: 0,
            o_hat: vec![0.5, 0.5],
            r: vec![1.0, 0.75],
            energy: -1.25,
        }];
        let mut buf = Vec::new();
        write_diagnostics_csv(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,energy,o_hat0,o_hat1,r0,r1\n0,-1.25,0.5,0.5,1.0,0.75\n"
        );
    }

    proptest! {
        #[test]
        fn projection_is_nearest_vertex(scores in prop::collection::vec(-10.0..10.0f64, 2..10)) {
            let p = simplex_project(&scores);
            let j = argmax(&scores);
            let d = |k: usize| -> f64 {
                scores.iter().enumerate().map(|(i, s)| (s - if i == k { 1.0 } else { 0.0 }).powi(2)).sum()
            };
            for k in 0..scores.len() {
                prop_assert!(d(j) <= d(k) + 1e-12);
            }
            prop_assert_eq!(simplex_project(&p), p);
        }
    }
}
