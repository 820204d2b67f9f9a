use std::collections::HashSet;

use proptest::prelude::*;

use ptn_core::data::Role;
use ptn_core::episodes::{run_benchmark, sample_episode, BenchOptions, EpisodeSpec, UnlabeledMode};
use ptn_core::synth::{gaussian_blobs, BlobSpec};
use ptn_core::Method;

fn blobs(classes: usize, per_class: usize) -> ptn_core::episodes::Pool {
    gaussian_blobs(
        &BlobSpec { classes, per_class, dim: 6, sigma: 0.3, radius: 1.0, base: 0.0 },
        17,
    )
}

fn spec(ways: usize, unlabeled: usize, distractor: bool, episodes: usize, seed: u64) -> EpisodeSpec {
    EpisodeSpec {
        ways,
        shots: 1,
        queries: 3,
        unlabeled,
        n_mode: UnlabeledMode::PerClass,
        distractor,
        num_episodes: episodes,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sampled_roles_are_disjoint(seed in any::<u64>(), index in 0usize..1000, ways in 2usize..5, distractor in any::<bool>()) {
        let pool = blobs(7, 20);
        let sp = spec(ways, 4, distractor, 1, seed);
        let s = sample_episode(&pool, &sp, index).unwrap();
        let ids: Vec<&str> = s.episode.points().iter().map(|p| p.id.as_str()).collect();
        let unique: HashSet<&str> = ids.iter().copied().collect();
        prop_assert_eq!(unique.len(), ids.len());
        prop_assert_eq!(s.episode.num_support(), ways);
        prop_assert_eq!(s.episode.num_query(), ways * 3);
        let chosen: HashSet<i64> = s.classes.iter().copied().collect();
        if distractor {
            prop_assert!(s.unlabeled_classes.iter().all(|c| !chosen.contains(c)));
        } else {
            prop_assert!(s.unlabeled_classes.iter().all(|c| chosen.contains(c)));
        }
        let again = sample_episode(&pool, &sp, index).unwrap();
        prop_assert_eq!(again.episode, s.episode);
    }
}

#[test]
fn per_class_unlabeled_count_scales_with_ways() {
    let pool = blobs(5, 220);
    let mut sp = spec(5, 200, false, 1, 3);
    sp.queries = 15;
    let s = sample_episode(&pool, &sp, 0).unwrap();
    assert_eq!(s.episode.num_unlabeled(), 1000);
    sp.n_mode = UnlabeledMode::Total;
    let s = sample_episode(&pool, &sp, 0).unwrap();
    assert_eq!(s.episode.num_unlabeled(), 200);
}

#[test]
fn report_statistics_are_consistent() {
    let pool = blobs(6, 30);
    let report = run_benchmark(&pool, &spec(3, 5, false, 12, 9), &BenchOptions::new(Method::Ptn)).unwrap();
    assert_eq!(report.per_episode.len(), 12);
    assert!(report.per_episode.iter().all(|a| (0.0..=1.0).contains(a)));
    let n = report.per_episode.len() as f64;
    let mean = report.per_episode.iter().sum::<f64>() / n;
    let var = report.per_episode.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((report.mean_accuracy - 100.0 * mean).abs() <= 1e-12 * 100.0);
    assert!((report.ci95 - 100.0 * 1.96 * var.sqrt() / n.sqrt()).abs() <= 1e-9);
}

#[test]
fn report_is_independent_of_worker_count() {
    let pool = blobs(6, 30);
    let sp = spec(3, 5, true, 10, 21);
    let run = |jobs| {
        let mut opts = BenchOptions::new(Method::Dpn);
        opts.jobs = Some(jobs);
        let mut r = run_benchmark(&pool, &sp, &opts).unwrap();
        r.wall_time = 0.0;
        serde_json::to_string(&r).unwrap()
    };
    let one = run(1);
    assert_eq!(run(2), one);
    assert_eq!(run(4), one);
}

#[test]
fn distractor_needs_spare_classes() {
    let pool = blobs(3, 30);
    let err = sample_episode(&pool, &spec(3, 2, true, 1, 0), 0).unwrap_err();
    assert_eq!(err.kind().exit_code(), 1);
}

#[test]
fn query_truth_matches_pool_classes() {
    let pool = blobs(5, 25);
    let s = sample_episode(&pool, &spec(4, 3, false, 1, 77), 5).unwrap();
    let class_of: std::collections::HashMap<&str, i64> =
        pool.points().iter().map(|p| (p.id.as_str(), p.class)).collect();
    let queries = s.episode.points().iter().filter(|p| p.role == Role::Query);
    for (p, &t) in queries.zip(&s.query_truth) {
        assert_eq!(class_of[p.id.as_str()], s.classes[t]);
    }
    for p in s.episode.points().iter().filter(|p| p.role == Role::Support) {
        assert_eq!(class_of[p.id.as_str()], s.classes[p.label.unwrap()]);
    }
}
