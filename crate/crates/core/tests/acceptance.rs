//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng;

use ptn_core::calibration::calibrate;
use ptn_core::contrastive::{ut_loss_and_grad, nt_xent_loss, ContrastiveBatch};
use ptn_core::data::Role;
use ptn_core::episodes::{run_benchmark, run_benchmark_with, BenchOptions, EpisodeSpec, Pool, SampledEpisode, UnlabeledMode};
use ptn_core::mbo::{predict_labels, poisson_mbo_with, simplex_project};
use ptn_core::poisson::{
    degree_weighted_sums, poisson_converge, poisson_iterate_until, poisson_solve_dense, residual, SourceMatrix,
    DENSE_ORACLE_MAX_VERTICES,
};
use ptn_core::synth::{gaussian_blobs, nearest_center_accuracy, BlobSpec};
use ptn_core::{ClassPrior, Method, SolverConfig, SparseGraph};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct PoissonCase {
    graph: SparseGraph,
    source: SourceMatrix,
}

fn poisson_cases() -> Vec<PoissonCase> {
    let mut rng = common::rng(20);
    (0..50)
        .map(|_| {
            let m = rng.random_range(5..=60);
            let graph = common::random_connected_graph(&mut rng, m);
            let classes = rng.random_range(2..=5).min(m - 1);
            let labeled = rng.random_range(classes..m);
            let source = common::random_source(&mut rng, m, classes, labeled);
            PoissonCase { graph, source }
        })
        .collect()
}

const ITERATIVE_TOL: f64 = 1e-13;
const ITERATIVE_MAX_STEPS: usize = 200_000;

fn poisson_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for case in poisson_cases() {
        let (iterative, _) =
            poisson_iterate_until(&case.graph, &case.source, ITERATIVE_TOL, ITERATIVE_MAX_STEPS).unwrap();
        let dense = poisson_solve_dense(&case.graph, &case.source, DENSE_ORACLE_MAX_VERTICES).unwrap();
        worst = worst.max(iterative.max_abs_diff(&dense));
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-6 && elapsed < Duration::from_secs(5),
        format!("max |G_iter - G_dense| = {worst:.3e} over 50 graphs in {:.2}s", elapsed.as_secs_f64()),
    )
}

fn poisson_residual() -> Verdict {
    let mut worst_res: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for case in poisson_cases() {
        let (g, _) = poisson_converge(&case.graph, &case.source, 1e-14, 200_000).unwrap();
        worst_res = worst_res.max(residual(&case.graph, &case.source, &g));
        for s in degree_weighted_sums(&case.graph, &g) {
            worst_sum = worst_sum.max(s.abs());
        }
    }
    verdict(
        worst_res <= 1e-6 && worst_sum <= 1e-8,
        format!("max residual {worst_res:.3e}, max degree-weighted sum {worst_sum:.3e}"),
    )
}

fn path_graph_fixture() -> Verdict {
    let graph = SparseGraph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
    let source = SourceMatrix::from_labels(3, 2, &[0, 1]);
    let expected = [[0.375, -0.375], [-0.125, 0.125], [-0.125, 0.125]];
    let (iterative, _) = poisson_converge(&graph, &source, 1e-15, 10_000).unwrap();
    let dense = poisson_solve_dense(&graph, &source, DENSE_ORACLE_MAX_VERTICES).unwrap();
    let mut err: f64 = 0.0;
    for (i, row) in expected.iter().enumerate() {
        for (c, &e) in row.iter().enumerate() {
            err = err.max((iterative.get(i, c) - e).abs());
            err = err.max((dense.get(i, c) - e).abs());
        }
    }
    let query_class = predict_labels(&iterative.slice_rows(2, 3))[0];
    verdict(
        err <= 1e-6 && query_class == 1,
        format!("max error {err:.3e}, query class {query_class}"),
    )
}

fn calibration_exactness() -> Verdict {
    let mut rng = common::rng(30);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let classes = rng.random_range(2..=5);
        let shots = rng.random_range(1..=3);
        let unlabeled = rng.random_range(0..=20);
        let queries = rng.random_range(1..=20);
        let dim = rng.random_range(2..=32);
        let ep = common::random_episode(&mut rng, classes, shots, unlabeled, queries, dim);
        let cal = calibrate(&ep, false).unwrap();
        let mut b = vec![0.0; dim];
        let mut q = vec![0.0; dim];
        let (mut nb, mut nq) = (0.0, 0.0);
        for p in cal.points() {
            let (acc, n) = if p.role == Role::Query { (&mut q, &mut nq) } else { (&mut b, &mut nb) };
            for (a, x) in acc.iter_mut().zip(&p.vector) {
                *a += x;
            }
            *n += 1.0;
        }
        for (x, y) in b.iter().zip(&q) {
            worst = worst.max((x / nb - y / nq).abs());
        }
    }
    verdict(worst <= 1e-9, format!("max |mean(Q) - mean(B)| = {worst:.3e} over 100 episodes"))
}

fn is_one_hot(row: &[f64]) -> bool {
    row.iter().filter(|&&v| v == 1.0).count() == 1 && row.iter().all(|&v| v == 0.0 || v == 1.0)
}

fn mbo_structure() -> Verdict {
    let mut rng = common::rng(40);
    let mut bad_rows = 0usize;
    let mut checked = 0usize;
    for _ in 0..10 {
        let classes = rng.random_range(2..=4);
        let ep = common::random_episode(&mut rng, classes, 2, 20, 10, 6);
        let prior = ClassPrior::uniform(classes);
        for m1 in 1..=5 {
            let config = SolverConfig { m1, ..SolverConfig::default() };
            let (out, _) = poisson_mbo_with(&ep, &config, &prior, true).unwrap();
            for i in 0..out.full.rows() {
                checked += 1;
                if !is_one_hot(out.full.row(i)) {
                    bad_rows += 1;
                }
            }
        }
    }

    let mut projection_failures = 0usize;
    for classes in 2..=10 {
        for _ in 0..1000 {
            let s: Vec<f64> = (0..classes).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = simplex_project(&s);
            let dist = |k: usize| -> f64 {
                s.iter()
                    .enumerate()
                    .map(|(j, v)| (v - if j == k { 1.0 } else { 0.0 }).powi(2))
                    .sum()
            };
            let chosen = p.iter().position(|&v| v == 1.0);
            let ok = is_one_hot(&p)
                && chosen.is_some_and(|j| (0..classes).all(|k| dist(j) <= dist(k)))
                && simplex_project(&p) == p;
            if !ok {
                projection_failures += 1;
            }
        }
    }
    verdict(
        bad_rows == 0 && projection_failures == 0,
        format!(
            "{bad_rows}/{checked} non-one-hot rows after outer iterations 1..5; \
             {projection_failures}/9000 projection failures for C = 2..10"
        ),
    )
}

/// Smallest-noise blob spec whose Bayes accuracy is about `target`.
fn blob_spec_for_bayes(classes: usize, dim: usize, target: f64) -> (BlobSpec, f64) {
    let mut spec = BlobSpec { classes, per_class: 3000, dim, sigma: 1.0, radius: 1.0, base: 0.0 };
    let (mut lo, mut hi) = (0.01, 5.0);
    for _ in 0..30 {
        spec.sigma = 0.5 * (lo + hi);
        let acc = nearest_center_accuracy(&spec, &gaussian_blobs(&spec, 1));
        if acc > target {
            lo = spec.sigma;
        } else {
            hi = spec.sigma;
        }
    }
    let bayes = nearest_center_accuracy(&spec, &gaussian_blobs(&spec, 2));
    (spec, bayes)
}

fn ordering() -> Verdict {
    let start = Instant::now();
    let (mut blob, bayes) = blob_spec_for_bayes(3, 3, 0.85);
    blob.per_class = 200;
    let pool = gaussian_blobs(&blob, 50);
    let spec = EpisodeSpec {
        ways: 3,
        shots: 1,
        queries: 15,
        unlabeled: 100,
        n_mode: UnlabeledMode::PerClass,
        distractor: false,
        num_episodes: 100,
        seed: 50,
    };
    let poisson = run_benchmark(&pool, &spec, &BenchOptions::new(Method::Poisson)).unwrap();
    let lp = run_benchmark(&pool, &spec, &BenchOptions::new(Method::Lp)).unwrap();
    let elapsed = start.elapsed();
    verdict(
        poisson.mean_accuracy >= lp.mean_accuracy && elapsed < Duration::from_secs(120),
        format!(
            "sigma {:.3} (Bayes {:.1}%): PoissonMBO {:.2} ± {:.2} vs LP {:.2} ± {:.2} in {:.1}s",
            blob.sigma,
            100.0 * bayes,
            poisson.mean_accuracy,
            poisson.ci95,
            lp.mean_accuracy,
            lp.ci95,
            elapsed.as_secs_f64()
        ),
    )
}

fn shift_queries(sampled: &mut SampledEpisode, offset: &[f64]) {
    sampled.episode = sampled
        .episode
        .map_vectors(|_, p| {
            Ok(if p.role == Role::Query {
                p.vector.iter().zip(offset).map(|(x, o)| x + o).collect()
            } else {
                p.vector.clone()
            })
        })
        .unwrap();
}

fn calibration_benefit() -> Verdict {
    let (mut blob, _) = blob_spec_for_bayes(5, 5, 0.95);
    blob.per_class = 100;
    blob.base = 1.0;
    let pool = gaussian_blobs(&blob, 60);
    let spec = EpisodeSpec {
        ways: 5,
        shots: 1,
        queries: 15,
        unlabeled: 20,
        n_mode: UnlabeledMode::PerClass,
        distractor: false,
        num_episodes: 100,
        seed: 60,
    };
    let scale = 1.0 / (blob.dim as f64).sqrt();
    let offset: Vec<f64> = (0..blob.dim)
        .map(|i| if i % 2 == 0 { scale } else { -scale })
        .collect();
    let shift = |s: &mut SampledEpisode| shift_queries(s, &offset);
    let dpn = run_benchmark_with(&pool, &spec, &BenchOptions::new(Method::Dpn), shift).unwrap();
    let raw = run_benchmark_with(&pool, &spec, &BenchOptions::new(Method::Poisson), shift).unwrap();
    verdict(
        dpn.mean_accuracy >= raw.mean_accuracy + 5.0,
        format!(
            "unit query shift: DPN {:.2} ± {:.2} vs uncalibrated {:.2} ± {:.2} ({:+.2} points)",
            dpn.mean_accuracy,
            dpn.ci95,
            raw.mean_accuracy,
            raw.ci95,
            dpn.mean_accuracy - raw.mean_accuracy
        ),
    )
}

fn finite_difference(batch: &ContrastiveBatch, tau: f64, lambda: f64, h: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let loss = |b: &ContrastiveBatch| ut_loss_and_grad(b, tau, lambda).unwrap().loss;
    let mut gt = vec![vec![0.0; batch.dim()]; batch.n()];
    let mut gtp = gt.clone();
    for i in 0..batch.n() {
        for k in 0..batch.dim() {
            for (view, out) in [(0, &mut gt), (1, &mut gtp)] {
                let mut plus = batch.clone();
                let mut minus = batch.clone();
                if view == 0 {
                    plus.z_t[i][k] += h;
                    minus.z_t[i][k] -= h;
                } else {
                    plus.z_tp[i][k] += h;
                    minus.z_tp[i][k] -= h;
                }
                out[i][k] = (loss(&plus) - loss(&minus)) / (2.0 * h);
            }
        }
    }
    (gt, gtp)
}

fn contrastive_gradient() -> Verdict {
    let mut rng = common::rng(70);
    let mut worst: f64 = 0.0;
    let batches = 25;
    for _ in 0..batches {
        let n = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let z_t = (0..n).map(|_| common::gaussian_vec(&mut rng, d)).collect();
        let z_tp = (0..n).map(|_| common::gaussian_vec(&mut rng, d)).collect();
        let batch = ContrastiveBatch::new(z_t, z_tp).unwrap();
        let tau = rng.random_range(0.1..1.0);
        let lambda = rng.random_range(0.0..2.0);
        let analytic = ut_loss_and_grad(&batch, tau, lambda).unwrap();
        let (ft, ftp) = finite_difference(&batch, tau, lambda, 1e-5);
        let a: Vec<f64> = analytic.grad_t.iter().chain(&analytic.grad_tp).flatten().copied().collect();
        let f: Vec<f64> = ft.iter().chain(&ftp).flatten().copied().collect();
        let diff = a.iter().zip(&f).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = f.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
        worst = worst.max(diff / scale);
    }
    let mut rng = common::rng(71);
    let single = ContrastiveBatch::new(
        vec![common::gaussian_vec(&mut rng, 5)],
        vec![common::gaussian_vec(&mut rng, 5)],
    )
    .unwrap();
    let single_loss = nt_xent_loss(&single, 0.1).unwrap();
    verdict(
        worst <= 1e-4 && single_loss == 0.0,
        format!("max relative gradient error {worst:.3e} over {batches} batches; n=1 loss {single_loss}"),
    )
}

fn run_episodes_cli(pool: &std::path::Path, jobs: usize) -> serde_json::Value {
    let out = Command::new(env!("CARGO_BIN_EXE_ptn"))
        .args(["episodes", "--pool"])
        .arg(pool)
        .args(["--ways", "3", "--shots", "1", "--queries", "5", "--unlabeled", "10"])
        .args(["--episodes", "24", "--seed", "7", "--jobs", &jobs.to_string()])
        .output()
        .expect("ptn binary runs");
    assert!(out.status.success(), "episodes failed: {}", String::from_utf8_lossy(&out.stderr));
    let mut json: serde_json::Value = serde_json::from_slice(&out.stdout).expect("JSON on stdout");
    json.as_object_mut().unwrap().remove("wall_time");
    json
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.csv");
    let blob = BlobSpec { classes: 4, per_class: 30, dim: 8, sigma: 0.4, radius: 1.0, base: 0.0 };
    let mut file = std::fs::File::create(&path).unwrap();
    gaussian_blobs(&blob, 80).write_csv(&mut file).unwrap();
    drop(file);
    let reference = serde_json::to_string(&run_episodes_cli(&path, 1)).unwrap();
    let mut identical = 0;
    let runs = [1usize, 2, 3, 8, 8];
    for jobs in runs {
        if serde_json::to_string(&run_episodes_cli(&path, jobs)).unwrap() == reference {
            identical += 1;
        }
    }
    verdict(
        identical == runs.len(),
        format!("{identical}/{} reruns byte-identical across --jobs 1,2,3,8,8", runs.len()),
    )
}

fn end_to_end_scale() -> Verdict {
    let blob = BlobSpec { classes: 10, per_class: 130, dim: 64, sigma: 0.1, radius: 1.0, base: 0.0 };
    let pool: Pool = gaussian_blobs(&blob, 90);
    let spec = EpisodeSpec {
        ways: 5,
        shots: 1,
        queries: 15,
        unlabeled: 100,
        n_mode: UnlabeledMode::PerClass,
        distractor: false,
        num_episodes: 600,
        seed: 90,
    };
    let start = Instant::now();
    let report = run_benchmark(&pool, &spec, &BenchOptions::new(Method::Ptn)).unwrap();
    let elapsed = start.elapsed();
    verdict(
        report.per_episode.len() == 600 && elapsed < Duration::from_secs(600),
        format!(
            "600 episodes (m = 580, d = 64) in {:.1}s ({:.1} ms/episode), accuracy {}",
            elapsed.as_secs_f64(),
            1000.0 * elapsed.as_secs_f64() / 600.0,
            report.summary()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("poisson oracle equivalence", poisson_oracle_equivalence),
        ("poisson residual", poisson_residual),
        ("path-graph fixture", path_graph_fixture),
        ("calibration exactness", calibration_exactness),
        ("mbo structure", mbo_structure),
        ("ordering poisson-mbo >= lp", ordering),
        ("calibration benefit", calibration_benefit),
        ("contrastive gradient check", contrastive_gradient),
        ("determinism across --jobs", determinism),
        ("end-to-end scale", end_to_end_scale),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let v = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                verdict(false, format!("panicked: {msg}"))
            });
        if !v.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
