//! Synthetic Gaussian-blob pools for tests and desk-scale benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::episodes::{Pool, PoolPoint};

#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Isotropic noise standard deviation.
    pub sigma: f64,
    /// Distance of each class center from the shared base point, along its
    /// own axis. Pairwise center distance is `radius * sqrt(2)`.
    pub radius: f64,
    /// Value of every coordinate of the shared base point.
    pub base: f64,
}

impl BlobSpec {
    pub fn center(&self, class: usize) -> Vec<f64> {
        let mut c = vec![self.base; self.dim];
        c[class % self.dim] += self.radius;
        c
    }
}

pub fn gaussian_blobs(spec: &BlobSpec, seed: u64) -> Pool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.sigma).expect("sigma must be finite and >= 0");
    let mut points = Vec::with_capacity(spec.classes * spec.per_class);
    for class in 0..spec.classes {
        let center = spec.center(class);
        for i in 0..spec.per_class {
            let vector = center.iter().map(|c| c + noise.sample(&mut rng)).collect();
            points.push(PoolPoint {
                id: format!("c{class}_{i}"),
                class: class as i64,
                vector,
            });
        }
    }
    Pool::new(points).expect("generated pool is well-formed")
}

/// Fraction of pool points whose nearest class center is their own, i.e.
/// the accuracy of the Bayes classifier for equal-prior isotropic blobs.
pub fn nearest_center_accuracy(spec: &BlobSpec, pool: &Pool) -> f64 {
    let centers: Vec<Vec<f64>> = (0..spec.classes).map(|c| spec.center(c)).collect();
    let correct = pool
        .points()
        .iter()
        .filter(|p| {
            let best = centers
                .iter()
                .enumerate()
                .map(|(c, ctr)| (crate::graph::squared_distance(&p.vector, ctr), c))
                .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a });
            best.1 as i64 == p.class
        })
        .count();
    correct as f64 / pool.points().len() as f64
}
