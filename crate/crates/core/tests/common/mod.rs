#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ptn_core::poisson::SourceMatrix;
use ptn_core::{EpisodeData, FeaturePoint, SparseGraph};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Random kNN Gaussian graph on standard-normal points, resampled until
/// connected.
pub fn random_connected_graph(rng: &mut ChaCha8Rng, m: usize) -> SparseGraph {
    loop {
        let d = rng.random_range(2..=6);
        let k = rng.random_range(2..=(m - 1).min(8));
        let pts: Vec<Vec<f64>> = (0..m).map(|_| gaussian_vec(rng, d)).collect();
        let g = SparseGraph::knn_gaussian(&pts, k).expect("valid kNN graph");
        if g.components() == 1 {
            return g;
        }
    }
}

/// Source with the first `labeled` vertices carrying random classes, every
/// class used at least once.
pub fn random_source(rng: &mut ChaCha8Rng, m: usize, classes: usize, labeled: usize) -> SourceMatrix {
    let mut labels: Vec<usize> = (0..labeled).map(|i| i % classes).collect();
    for i in (1..labels.len()).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }
    SourceMatrix::from_labels(m, classes, &labels)
}

/// Episode with random Gaussian features.
pub fn random_episode(
    rng: &mut ChaCha8Rng,
    classes: usize,
    shots: usize,
    unlabeled: usize,
    queries: usize,
    dim: usize,
) -> EpisodeData {
    let mut pts = Vec::new();
    for c in 0..classes {
        for s in 0..shots {
            pts.push(FeaturePoint::support(format!("s{c}_{s}"), c, gaussian_vec(rng, dim)));
        }
    }
    for u in 0..unlabeled {
        pts.push(FeaturePoint::unlabeled(format!("u{u}"), gaussian_vec(rng, dim)));
    }
    for q in 0..queries {
        pts.push(FeaturePoint::query(format!("q{q}"), gaussian_vec(rng, dim)));
    }
    EpisodeData::new(pts, classes).expect("well-formed episode")
}

/// Episode whose classes are tight blobs around `centers`; queries are
/// listed class by class, `queries` per class.
pub fn blob_episode(
    rng: &mut ChaCha8Rng,
    centers: &[Vec<f64>],
    sigma: f64,
    unlabeled: usize,
    queries: usize,
) -> (EpisodeData, Vec<usize>) {
    let mut pts = Vec::new();
    let mut truth = Vec::new();
    let jitter = |rng: &mut ChaCha8Rng, c: &[f64]| -> Vec<f64> {
        c.iter()
            .map(|x| {
                let z: f64 = StandardNormal.sample(rng);
                x + sigma * z
            })
            .collect()
    };
    for (c, ctr) in centers.iter().enumerate() {
        pts.push(FeaturePoint::support(format!("s{c}"), c, jitter(rng, ctr)));
        for u in 0..unlabeled {
            pts.push(FeaturePoint::unlabeled(format!("u{c}_{u}"), jitter(rng, ctr)));
        }
        for q in 0..queries {
            pts.push(FeaturePoint::query(format!("q{c}_{q}"), jitter(rng, ctr)));
            truth.push(c);
        }
    }
    (EpisodeData::new(pts, centers.len()).expect("well-formed episode"), truth)
}
