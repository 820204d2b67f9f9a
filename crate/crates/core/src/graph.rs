//! kNN graph with Gaussian weights, stored as a symmetric CSR matrix.
//!
//! Edge weights are `exp(-4 |z_i - z_j|^2 / d_K(z_i)^2)` where `d_K` is the
//! distance from `z_i` to its k-th nearest neighbor. The directed kNN
//! weights are symmetrized by averaging, so `W = (W_dir + W_dir^T) / 2`.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::data::LabelMatrix;
use crate::error::{Error, Result};

/// Sorted neighbor lists `(index, distance)` for every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhoods {
    pub lists: Vec<Vec<(usize, f64)>>,
    /// Distance to the k-th nearest neighbor.
    pub kth_distance: Vec<f64>,
}

/// Exact kNN by brute force. Ties are broken by ascending vertex index.
pub fn knn_neighbors<V>(features: &[V], k: usize) -> Result<Neighborhoods>
where
    V: AsRef<[f64]> + Sync,
{
    let m = features.len();
    if k == 0 || k >= m {
        return Err(Error::param(format!(
            "knn k={k} must satisfy 1 <= k < m={m}"
        )));
    }
    let lists: Vec<Vec<(usize, f64)>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let zi = features[i].as_ref();
            let mut cand: Vec<(f64, usize)> = (0..m)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(zi, features[j].as_ref()), j))
                .collect();
            let by_dist = |a: &(f64, usize), b: &(f64, usize)| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(Ordering::Equal)
                    .then(a.1.cmp(&b.1))
            };
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, by_dist);
                cand.truncate(k);
            }
            cand.sort_by(by_dist);
            cand.into_iter().map(|(d2, j)| (j, d2.sqrt())).collect()
        })
        .collect();
    let kth_distance = lists.iter().map(|l| l[k - 1].1).collect();
    Ok(Neighborhoods {
        lists,
        kth_distance,
    })
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Directed (asymmetric) kNN weights; row `i` holds `(j, w_ij)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedWeights {
    pub m: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

/// Gaussian kernel weights over each neighbor list.
///
/// When `d_K(z_i)` is zero (duplicates fill the first k slots) the smallest
/// nonzero neighbor distance is used as bandwidth instead.
pub fn gaussian_weights(nb: &Neighborhoods) -> Result<DirectedWeights> {
    let m = nb.lists.len();
    let mut rows = Vec::with_capacity(m);
    for (i, list) in nb.lists.iter().enumerate() {
        let mut bw = nb.kth_distance[i];
        if bw <= 0.0 {
            bw = list
                .iter()
                .map(|&(_, d)| d)
                .find(|&d| d > 0.0)
                .ok_or(Error::DegenerateNeighborhood { vertex: i })?;
        }
        let bw2 = bw * bw;
        rows.push(
            list.iter()
                .filter(|&&(j, _)| j != i)
                .map(|&(j, d)| (j, (-4.0 * d * d / bw2).exp()))
                .collect(),
        );
    }
    Ok(DirectedWeights { m, rows })
}

/// Symmetric weight matrix with degrees; the Laplacian `L = D - W` is
/// applied on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    m: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    degrees: Vec<f64>,
}

/// Symmetrizes directed weights by averaging and builds the graph.
pub fn assemble_graph(directed: &DirectedWeights) -> Result<SparseGraph> {
    let m = directed.m;
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (i, row) in directed.rows.iter().enumerate() {
        for &(j, w) in row {
            if i == j {
                continue;
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::param(format!("weight ({i},{j}) = {w} is not >= 0")));
            }
            triplets.push((i, j, 0.5 * w));
            triplets.push((j, i, 0.5 * w));
        }
    }
    SparseGraph::from_triplets(m, triplets)
}

impl SparseGraph {
    /// Builds from `(i, j, w)` entries, summing duplicates. The caller is
    /// responsible for symmetry.
    fn from_triplets(m: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; m + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, w) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += w;
            } else {
                cols.push(j);
                vals.push(w);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        let degrees: Vec<f64> = (0..m)
            .map(|i| vals[row_ptr[i]..row_ptr[i + 1]].iter().sum())
            .collect();
        if let Some(vertex) = degrees.iter().position(|&d| d <= 0.0) {
            return Err(Error::IsolatedVertex { vertex });
        }
        Ok(SparseGraph {
            m,
            row_ptr,
            cols,
            vals,
            degrees,
        })
    }

    /// Undirected graph from an edge list; each `(i, j, w)` sets both
    /// `w_ij` and `w_ji`.
    pub fn from_edges(m: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut t = Vec::with_capacity(edges.len() * 2);
        for &(i, j, w) in edges {
            if i == j || i >= m || j >= m {
                return Err(Error::param(format!("bad edge ({i},{j})")));
            }
            t.push((i, j, w));
            t.push((j, i, w));
        }
        SparseGraph::from_triplets(m, t)
    }

    /// Builds the full kNN Gaussian graph over `features`.
    pub fn knn_gaussian<V>(features: &[V], k: usize) -> Result<Self>
    where
        V: AsRef<[f64]> + Sync,
    {
        let nb = knn_neighbors(features, k)?;
        assemble_graph(&gaussian_weights(&nb)?)
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn max_degree(&self) -> f64 {
        self.degrees.iter().copied().fold(0.0, f64::max)
    }

    pub fn num_edges(&self) -> usize {
        self.cols.len() / 2
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(pos) => self.vals[r.start + pos],
            Err(_) => 0.0,
        }
    }

    /// `W x` for a vector.
    pub fn apply_weights_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| self.neighbors(i).map(|(j, w)| w * x[j]).sum())
            .collect()
    }

    /// `L x` for a vector.
    pub fn apply_laplacian_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| {
                self.degrees[i] * x[i] - self.neighbors(i).map(|(j, w)| w * x[j]).sum::<f64>()
            })
            .collect()
    }

    /// `L G` for an `m x C` matrix, written into `out`.
    pub fn apply_laplacian_into(&self, g: &LabelMatrix, out: &mut LabelMatrix) {
        let c = g.cols();
        debug_assert_eq!(g.rows(), self.m);
        let src = g.as_slice();
        let dst = out.as_mut_slice();
        for i in 0..self.m {
            let row = &mut dst[i * c..(i + 1) * c];
            let di = self.degrees[i];
            for k in 0..c {
                row[k] = di * src[i * c + k];
            }
            for (j, w) in self.neighbors(i) {
                let gj = &src[j * c..(j + 1) * c];
                for k in 0..c {
                    row[k] -= w * gj[k];
                }
            }
        }
    }

    pub fn apply_laplacian(&self, g: &LabelMatrix) -> LabelMatrix {
        let mut out = LabelMatrix::zeros(g.rows(), g.cols());
        self.apply_laplacian_into(g, &mut out);
        out
    }

    /// `g^T L g` for a single column.
    pub fn quadratic_form(&self, g: &[f64]) -> f64 {
        self.apply_laplacian_vec(g)
            .iter()
            .zip(g)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// `trace(G^T L G)`.
    pub fn dirichlet_energy(&self, g: &LabelMatrix) -> f64 {
        let lg = self.apply_laplacian(g);
        lg.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
    }

    /// Number of connected components.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.m];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.m {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            stack.push(s);
            while let Some(v) = stack.pop() {
                for (u, _) in self.neighbors(v) {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        count
    }

    pub fn dense_weights(&self) -> Vec<Vec<f64>> {
        let mut w = vec![vec![0.0; self.m]; self.m];
        for (i, row) in w.iter_mut().enumerate() {
            for (j, v) in self.neighbors(i) {
                row[j] = v;
            }
        }
        w
    }

    /// Edge list `i j w_ij`, one line per undirected edge with `i < j`.
    pub fn write_edge_list<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for i in 0..self.m {
            for (j, w) in self.neighbors(i) {
                if i < j {
                    writeln!(out, "{i} {j} {w:?}")?;
                }
            }
        }
        Ok(())
    }
}
