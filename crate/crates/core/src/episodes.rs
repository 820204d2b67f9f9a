//! Few-shot episode sampling from a labeled feature pool and the
//! benchmark harness that aggregates per-episode accuracy.
//!
//! Every episode draws from its own ChaCha stream keyed by
//! `(seed, episode_index)`, so episodes can be generated in any order or in
//! parallel with identical results.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::SolverConfig;
use crate::data::{read_rows, ClassPrior, EpisodeData, FeaturePoint};
use crate::error::{Error, Result};
use crate::pipeline::{infer, Method};

#[derive(Debug, Clone, PartialEq)]
pub struct PoolPoint {
    pub id: String,
    pub class: i64,
    pub vector: Vec<f64>,
}

/// Labeled feature pool, grouped by class.
#[derive(Debug, Clone)]
pub struct Pool {
    points: Vec<PoolPoint>,
    by_class: BTreeMap<i64, Vec<usize>>,
}

impl Pool {
    pub fn new(points: Vec<PoolPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidEpisode("pool is empty".into()));
        }
        let dim = points[0].vector.len();
        let mut by_class: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            if p.vector.len() != dim {
                return Err(Error::Dimension {
                    line: i + 2,
                    expected: dim,
                    found: p.vector.len(),
                });
            }
            if p.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { id: p.id.clone() });
            }
            by_class.entry(p.class).or_default().push(i);
        }
        Ok(Pool { points, by_class })
    }

    pub fn points(&self) -> &[PoolPoint] {
        &self.points
    }

    pub fn classes(&self) -> Vec<i64> {
        self.by_class.keys().copied().collect()
    }

    pub fn class_members(&self, class: i64) -> &[usize] {
        self.by_class.get(&class).map_or(&[], Vec::as_slice)
    }

    pub fn dim(&self) -> usize {
        self.points[0].vector.len()
    }

    /// Writes the pool in feature CSV form (role `S`, every row labeled).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "id,role,label")?;
        for k in 0..self.dim() {
            write!(out, ",f{k}")?;
        }
        writeln!(out)?;
        for p in &self.points {
            write!(out, "{},S,{}", p.id, p.class)?;
            for x in &p.vector {
                write!(out, ",{x:?}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Loads a pool from the feature CSV format; every row needs a label >= 0
/// and the role column is ignored.
pub fn load_pool(path: impl AsRef<Path>) -> Result<Pool> {
    let rows = read_rows(path.as_ref())?;
    let mut points = Vec::with_capacity(rows.len());
    for r in rows {
        if r.label < 0 {
            return Err(Error::Label {
                id: r.id,
                label: r.label,
                classes: 0,
            });
        }
        points.push(PoolPoint {
            id: r.id,
            class: r.label,
            vector: r.vector,
        });
    }
    Pool::new(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnlabeledMode {
    /// `N` unlabeled points per class.
    PerClass,
    /// `N` unlabeled points in total.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSpec {
    pub ways: usize,
    pub shots: usize,
    pub queries: usize,
    pub unlabeled: usize,
    pub n_mode: UnlabeledMode,
    pub distractor: bool,
    pub num_episodes: usize,
    pub seed: u64,
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            ways: 5,
            shots: 1,
            queries: 15,
            unlabeled: 0,
            n_mode: UnlabeledMode::PerClass,
            distractor: false,
            num_episodes: 600,
            seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 {
            return Err(Error::param("ways must be >= 2"));
        }
        if self.shots < 1 {
            return Err(Error::param("shots must be >= 1"));
        }
        if self.queries < 1 {
            return Err(Error::param("queries must be >= 1"));
        }
        if self.num_episodes < 1 {
            return Err(Error::param("episodes must be >= 1"));
        }
        Ok(())
    }

    /// Total unlabeled points per episode.
    pub fn unlabeled_total(&self) -> usize {
        match self.n_mode {
            UnlabeledMode::PerClass => self.unlabeled * self.ways,
            UnlabeledMode::Total => self.unlabeled,
        }
    }
}

/// A sampled episode plus its evaluation-only ground truth.
#[derive(Debug, Clone)]
pub struct SampledEpisode {
    pub episode: EpisodeData,
    /// Episode-local class of each query, in query order.
    pub query_truth: Vec<usize>,
    /// Pool classes backing episode classes `0..C`.
    pub classes: Vec<i64>,
    /// Pool class of every unlabeled point.
    pub unlabeled_classes: Vec<i64>,
}

pub fn episode_rng(seed: u64, episode_index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode_index as u64);
    rng
}

pub fn sample_episode(pool: &Pool, spec: &EpisodeSpec, episode_index: usize) -> Result<SampledEpisode> {
    spec.validate()?;
    let mut rng = episode_rng(spec.seed, episode_index);
    let all_classes = pool.classes();
    if all_classes.len() < spec.ways {
        return Err(Error::Capacity(format!(
            "pool has {} classes, need {}",
            all_classes.len(),
            spec.ways
        )));
    }
    if spec.distractor && all_classes.len() == spec.ways {
        return Err(Error::Capacity(
            "distractor mode needs classes beyond the episode's ways".into(),
        ));
    }
    let mut shuffled = all_classes.clone();
    shuffled.shuffle(&mut rng);
    let chosen: Vec<i64> = shuffled[..spec.ways].to_vec();
    let others: Vec<i64> = shuffled[spec.ways..].to_vec();

    let per_class_unlabeled = !spec.distractor && spec.n_mode == UnlabeledMode::PerClass;
    let mut support = Vec::new();
    let mut queries = Vec::new();
    let mut query_truth = Vec::new();
    let mut unlabeled: Vec<usize> = Vec::new();
    let mut leftovers: Vec<usize> = Vec::new();
    for (local, &class) in chosen.iter().enumerate() {
        let mut members = pool.class_members(class).to_vec();
        let need = spec.shots + spec.queries + if per_class_unlabeled { spec.unlabeled } else { 0 };
        if members.len() < need {
            return Err(Error::Capacity(format!(
                "class {class} has {} points, need {need}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let (s, rest) = members.split_at(spec.shots);
        let (q, rest) = rest.split_at(spec.queries);
        support.extend(s.iter().map(|&i| (i, local)));
        queries.extend_from_slice(q);
        query_truth.extend(std::iter::repeat_n(local, q.len()));
        if per_class_unlabeled {
            unlabeled.extend_from_slice(&rest[..spec.unlabeled]);
        } else {
            leftovers.extend_from_slice(rest);
        }
    }

    if !per_class_unlabeled && spec.unlabeled_total() > 0 {
        let mut source: Vec<usize> = if spec.distractor {
            others
                .iter()
                .flat_map(|&c| pool.class_members(c).iter().copied())
                .collect()
        } else {
            leftovers
        };
        let need = spec.unlabeled_total();
        if source.len() < need {
            let which = if spec.distractor { "distractor classes" } else { "episode classes" };
            return Err(Error::Capacity(format!(
                "{which} hold {} spare points, need {need}",
                source.len()
            )));
        }
        source.sort_unstable();
        source.shuffle(&mut rng);
        unlabeled.extend_from_slice(&source[..need]);
    }

    let pts = pool.points();
    let mut points = Vec::with_capacity(support.len() + unlabeled.len() + queries.len());
    for &(i, local) in &support {
        points.push(FeaturePoint::support(pts[i].id.clone(), local, pts[i].vector.clone()));
    }
    for &i in &unlabeled {
        points.push(FeaturePoint::unlabeled(pts[i].id.clone(), pts[i].vector.clone()));
    }
    for &i in &queries {
        points.push(FeaturePoint::query(pts[i].id.clone(), pts[i].vector.clone()));
    }
    let episode = EpisodeData::new(points, spec.ways)?;
    Ok(SampledEpisode {
        episode,
        query_truth,
        classes: chosen,
        unlabeled_classes: unlabeled.iter().map(|&i| pts[i].class).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub method: Method,
    /// Mean accuracy in percent.
    pub mean_accuracy: f64,
    /// 95% confidence half-width in percent.
    pub ci95: f64,
    /// Per-episode accuracy as a fraction in `[0, 1]`, by episode index.
    pub per_episode: Vec<f64>,
    pub spec: EpisodeSpec,
    pub config: SolverConfig,
    pub calibrate: bool,
    pub wall_time: f64,
}

impl BenchReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: {:.2} ± {:.2} ({} episodes)",
            self.method,
            self.mean_accuracy,
            self.ci95,
            self.per_episode.len()
        )
    }
}

/// Mean and `1.96 * std / sqrt(n)` (unbiased std; zero for a single value),
/// both scaled to percent.
pub fn mean_ci95(acc: &[f64]) -> (f64, f64) {
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let std = if acc.len() > 1 {
        (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (100.0 * mean, 100.0 * 1.96 * std / n.sqrt())
}

/// Benchmark options beyond the episode spec.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub method: Method,
    pub config: SolverConfig,
    /// Overrides the method's calibration default.
    pub calibrate: Option<bool>,
    /// Worker threads; `None` uses available parallelism.
    pub jobs: Option<usize>,
}

impl BenchOptions {
    pub fn new(method: Method) -> Self {
        BenchOptions {
            method,
            config: SolverConfig::default(),
            calibrate: None,
            jobs: None,
        }
    }
}

pub fn run_benchmark(pool: &Pool, spec: &EpisodeSpec, opts: &BenchOptions) -> Result<BenchReport> {
    run_benchmark_with(pool, spec, opts, |_| {})
}

/// Like [`run_benchmark`] but applies `transform` to every sampled episode
/// before inference (e.g. to inject a feature shift).
pub fn run_benchmark_with<F>(
    pool: &Pool,
    spec: &EpisodeSpec,
    opts: &BenchOptions,
    transform: F,
) -> Result<BenchReport>
where
    F: Fn(&mut SampledEpisode) + Sync,
{
    spec.validate()?;
    opts.config.validate()?;
    let start = Instant::now();
    let prior = ClassPrior::uniform(spec.ways);
    let run_one = |index: usize| -> Result<f64> {
        let wrap = |e: Error| Error::Episode {
            index,
            source: Box::new(e),
        };
        let mut sampled = sample_episode(pool, spec, index).map_err(wrap)?;
        transform(&mut sampled);
        let out = infer(&sampled.episode, &opts.config, opts.method, &prior, opts.calibrate)
            .map_err(wrap)?;
        let correct = out
            .predictions
            .iter()
            .zip(&sampled.query_truth)
            .filter(|(p, t)| p == t)
            .count();
        Ok(correct as f64 / sampled.query_truth.len() as f64)
    };

    let threads = opts.jobs.unwrap_or(0);
    let workers = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::param(format!("cannot start {threads} workers: {e}")))?;
    let per_episode: Vec<f64> = workers.install(|| {
        (0..spec.num_episodes)
            .into_par_iter()
            .map(run_one)
            .collect::<Result<Vec<f64>>>()
    })?;

    let (mean_accuracy, ci95) = mean_ci95(&per_episode);
    Ok(BenchReport {
        method: opts.method,
        mean_accuracy,
        ci95,
        per_episode,
        spec: spec.clone(),
        config: opts.config.clone(),
        calibrate: opts.calibrate.unwrap_or(opts.method.calibrates()),
        wall_time: start.elapsed().as_secs_f64(),
    })
}
