//! Query feature calibration against the support-pool/query mean offset.
//!
//! The support pool is `B = S ∪ U`. The bias is `mean(B) - mean(Q)` and is
//! added to every query vector, which makes the calibrated query mean equal
//! the support-pool mean.

use crate::data::{norm, EpisodeData, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BiasVector {
    pub delta: Vec<f64>,
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, dim: usize) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    if n == 0 {
        return None;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Some(acc)
}

fn pool_mean(episode: &EpisodeData) -> Option<Vec<f64>> {
    mean_of(
        episode
            .points()
            .iter()
            .filter(|p| p.role != Role::Query)
            .map(|p| p.vector.as_slice()),
        episode.dim(),
    )
}

fn query_mean(episode: &EpisodeData) -> Option<Vec<f64>> {
    mean_of(
        episode
            .points()
            .iter()
            .filter(|p| p.role == Role::Query)
            .map(|p| p.vector.as_slice()),
        episode.dim(),
    )
}

/// `mean(support pool) - mean(queries)`.
pub fn cross_class_bias(episode: &EpisodeData) -> Result<BiasVector> {
    let b = pool_mean(episode)
        .ok_or_else(|| Error::InvalidEpisode("support pool is empty".into()))?;
    let q = query_mean(episode)
        .ok_or_else(|| Error::InvalidEpisode("query set is empty".into()))?;
    Ok(BiasVector {
        delta: b.iter().zip(&q).map(|(x, y)| x - y).collect(),
    })
}

/// Adds `delta` to every query vector. Support and unlabeled points are
/// returned untouched.
pub fn calibrate_queries(episode: &EpisodeData, delta: &BiasVector) -> Result<EpisodeData> {
    if delta.delta.len() != episode.dim() {
        return Err(Error::Dimension {
            line: 0,
            expected: episode.dim(),
            found: delta.delta.len(),
        });
    }
    episode.map_vectors(|_, p| {
        Ok(if p.role == Role::Query {
            p.vector.iter().zip(&delta.delta).map(|(x, d)| x + d).collect()
        } else {
            p.vector.clone()
        })
    })
}

/// Calibration followed by optional re-normalization of the queries.
pub fn calibrate(episode: &EpisodeData, renormalize: bool) -> Result<EpisodeData> {
    let delta = cross_class_bias(episode)?;
    let out = calibrate_queries(episode, &delta)?;
    if !renormalize {
        return Ok(out);
    }
    out.map_vectors(|_, p| {
        if p.role != Role::Query {
            return Ok(p.vector.clone());
        }
        let n = norm(&p.vector);
        if n == 0.0 {
            return Err(Error::ZeroVector { id: p.id.clone() });
        }
        Ok(p.vector.iter().map(|x| x / n).collect())
    })
}
