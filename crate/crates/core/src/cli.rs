//! Command-line front end. Each successful command prints exactly one JSON
//! document on stdout; human-readable notes go to stderr.
//!
//! Exit codes: 0 success, 1 data error, 2 config error, 3 numerical error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::config::SolverConfig;
use crate::contrastive::{load_views, ut_loss_and_grad};
use crate::data::{load_feature_file, validate_episode, ClassPrior};
use crate::episodes::{load_pool, run_benchmark, BenchOptions, EpisodeSpec, UnlabeledMode};
use crate::error::{Error, Result};
use crate::mbo::{prepare_graph, write_diagnostics_csv};
use crate::pipeline::{infer, Method};
use crate::poisson::{
    build_source, degree_weighted_sums, poisson_converge, poisson_solve_dense, residual,
    DENSE_ORACLE_MAX_VERTICES,
};

#[derive(Debug, Parser)]
#[command(name = "ptn", version, about = "Poisson MBO label inference for few-shot episodes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict query labels for one episode.
    Infer(InferArgs),
    /// Sample episodes from a labeled pool and report mean accuracy.
    Episodes(EpisodesArgs),
    /// Contrastive transfer loss utilities.
    Loss {
        #[command(subcommand)]
        command: LossCommand,
    },
    /// Diagnostics.
    Diag {
        #[command(subcommand)]
        command: DiagCommand,
    },
    /// Report invariant violations of an episode file.
    Validate {
        #[arg(long)]
        features: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum LossCommand {
    /// Evaluate loss and gradient norm on a two-view feature CSV.
    Eval(LossArgs),
}

#[derive(Debug, Subcommand)]
pub enum DiagCommand {
    /// Compare the iterative Poisson solve with the dense oracle.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ptn,
    Dpn,
    Poisson,
    Lp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ptn => Method::Ptn,
            MethodArg::Dpn => Method::Dpn,
            MethodArg::Poisson => Method::Poisson,
            MethodArg::Lp => Method::Lp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NModeArg {
    PerClass,
    Total,
}

/// Overrides for every [`SolverConfig`] key. Flags win over `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub m1: Option<usize>,
    #[arg(long)]
    pub m2: Option<usize>,
    #[arg(long)]
    pub m3: Option<usize>,
    #[arg(long)]
    pub phi: Option<f64>,
    #[arg(long)]
    pub clip_lo: Option<f64>,
    #[arg(long)]
    pub clip_hi: Option<f64>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub tp_max: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label propagation alpha.
    #[arg(long = "alpha")]
    pub lp_alpha: Option<f64>,
    #[arg(long)]
    pub lp_max_iter: Option<usize>,
    #[arg(long)]
    pub lp_tol: Option<f64>,
    #[arg(long)]
    pub renormalize_queries: Option<bool>,
}

impl SolverArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<SolverConfig> {
        let mut cfg = match &self.config {
            Some(path) => SolverConfig::from_file(path).map_err(|e| match e {
                // An unreadable config file is a configuration problem.
                Error::Io { path, source } => {
                    Error::param(format!("cannot read config {}: {source}", path.display()))
                }
                other => other,
            })?,
            None => SolverConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            mu, m1, m2, m3, phi, clip_lo, clip_hi, knn_k, tp_max, tau, lambda, seed, lp_alpha,
            lp_max_iter, lp_tol, renormalize_queries
        );
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "ptn")]
    pub method: MethodArg,
    /// `uniform`, a file of fractions, or inline comma-separated fractions.
    #[arg(long, default_value = "uniform")]
    pub prior: String,
    #[arg(long)]
    pub no_calibration: bool,
    #[arg(long)]
    pub dump_graph: Option<PathBuf>,
    #[arg(long)]
    pub dump_diagnostics: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EpisodesArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub ways: usize,
    #[arg(long, default_value_t = 1)]
    pub shots: usize,
    #[arg(long, default_value_t = 15)]
    pub queries: usize,
    #[arg(long, default_value_t = 0)]
    pub unlabeled: usize,
    #[arg(long, value_enum, default_value = "per-class")]
    pub n_mode: NModeArg,
    #[arg(long, default_value_t = 600)]
    pub episodes: usize,
    #[arg(long)]
    pub distractor: bool,
    #[arg(long, value_enum, default_value = "ptn")]
    pub method: MethodArg,
    #[arg(long)]
    pub no_calibration: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long)]
    pub views: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub no_calibration: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn parse_prior(spec: &str, classes: usize) -> Result<ClassPrior> {
    if spec == "uniform" {
        return Ok(ClassPrior::uniform(classes));
    }
    let path = Path::new(spec);
    let text = if path.is_file() {
        std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?
    } else {
        spec.to_string()
    };
    let prior = ClassPrior::parse(&text)?;
    if prior.len() != classes {
        return Err(Error::param(format!(
            "prior has {} entries for {classes} classes",
            prior.len()
        )));
    }
    Ok(prior)
}

fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).and_then(|_| std::fs::write(path, &buf)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn cmd_infer(args: &InferArgs, log: &mut dyn Write) -> Result<Value> {
    let config = args.solver.resolve()?;
    let start = Instant::now();
    let episode = load_feature_file(&args.features)?;
    let prior = parse_prior(&args.prior, episode.classes())?;
    let method: Method = args.method.into();
    let calibrate = if args.no_calibration { Some(false) } else { None };
    let out = infer(&episode, &config, method, &prior, calibrate)?;

    let components = out.graph.components();
    if components > 1 {
        let _ = writeln!(log, "warning: graph has {components} connected components");
    }
    if let Some(path) = &args.dump_graph {
        write_file(path, |b| out.graph.write_edge_list(b))?;
    }
    if let Some(path) = &args.dump_diagnostics {
        write_file(path, |b| write_diagnostics_csv(&out.diagnostics, b))?;
    }

    let mut predictions = Map::new();
    for (id, class) in episode.query_ids().into_iter().zip(&out.predictions) {
        predictions.insert(id.to_string(), json!(class));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let _ = writeln!(
        log,
        "{}: {} queries, {} classes, {:.3}s",
        method,
        out.predictions.len(),
        episode.classes(),
        elapsed
    );
    Ok(json!({
        "method": method.name(),
        "calibrate": calibrate.unwrap_or(method.calibrates()),
        "classes": episode.classes(),
        "num_points": episode.len(),
        "num_queries": out.predictions.len(),
        "propagation_steps": out.propagation_steps,
        "graph_components": components,
        "predictions": predictions,
        "wall_time": elapsed,
    }))
}

pub fn cmd_episodes(args: &EpisodesArgs, log: &mut dyn Write) -> Result<Value> {
    let config = args.solver.resolve()?;
    let spec = EpisodeSpec {
        ways: args.ways,
        shots: args.shots,
        queries: args.queries,
        unlabeled: args.unlabeled,
        n_mode: match args.n_mode {
            NModeArg::PerClass => UnlabeledMode::PerClass,
            NModeArg::Total => UnlabeledMode::Total,
        },
        distractor: args.distractor,
        num_episodes: args.episodes,
        seed: config.seed,
    };
    spec.validate()?;
    if args.jobs == Some(0) {
        return Err(Error::param("jobs must be >= 1"));
    }
    let pool = load_pool(&args.pool)?;
    let opts = BenchOptions {
        method: args.method.into(),
        config,
        calibrate: if args.no_calibration { Some(false) } else { None },
        jobs: args.jobs,
    };
    let report = run_benchmark(&pool, &spec, &opts)?;
    let _ = writeln!(log, "{}", report.summary());
    serde_json::to_value(&report).map_err(|e| Error::Numerical(e.to_string()))
}

pub fn cmd_loss(args: &LossArgs) -> Result<Value> {
    let config = args.solver.resolve()?;
    let batch = load_views(&args.views)?;
    let out = ut_loss_and_grad(&batch, config.tau, config.lambda)?;
    if !out.loss.is_finite() {
        return Err(Error::Numerical("loss is not finite".into()));
    }
    Ok(json!({
        "loss": out.loss,
        "grad_norm": out.grad_norm(),
        "n": batch.n(),
        "d": batch.dim(),
        "tau": config.tau,
        "lambda": config.lambda,
    }))
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<Value> {
    let config = args.solver.resolve()?;
    let episode = load_feature_file(&args.features)?;
    let (ep, graph) = prepare_graph(&episode, &config, !args.no_calibration)?;
    let source = build_source(&ep);
    let dense = poisson_solve_dense(&graph, &source, DENSE_ORACLE_MAX_VERTICES)?;
    let (iterative, steps) = poisson_converge(&graph, &source, 1e-12, 1_000_000)?;
    let sums = degree_weighted_sums(&graph, &iterative);
    Ok(json!({
        "num_points": ep.len(),
        "iterations": steps,
        "max_abs_diff": iterative.max_abs_diff(&dense),
        "residual_iterative": residual(&graph, &source, &iterative),
        "residual_dense": residual(&graph, &source, &dense),
        "max_degree_weighted_sum": sums.iter().map(|s| s.abs()).fold(0.0, f64::max),
    }))
}

pub fn cmd_validate(features: &Path) -> Result<Value> {
    let episode = load_feature_file(features)?;
    let violations: Vec<String> = validate_episode(&episode).iter().map(|v| v.to_string()).collect();
    Ok(json!({
        "valid": violations.is_empty(),
        "violations": violations,
        "classes": episode.classes(),
        "shots": episode.shots(),
        "num_unlabeled": episode.num_unlabeled(),
        "num_queries": episode.num_query(),
    }))
}

pub fn execute(cli: &Cli, log: &mut dyn Write) -> Result<Value> {
    match &cli.command {
        Command::Infer(a) => cmd_infer(a, log),
        Command::Episodes(a) => cmd_episodes(a, log),
        Command::Loss {
            command: LossCommand::Eval(a),
        } => cmd_loss(a),
        Command::Diag {
            command: DiagCommand::Oracle(a),
        } => cmd_oracle(a),
        Command::Validate { features } => cmd_validate(features),
    }
}

/// Parses `argv`, runs the command, and returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match execute(&cli, stderr) {
        Ok(value) => {
            let text = serde_json::to_string_pretty(&value).unwrap_or_default();
            let _ = writeln!(stdout, "{text}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.kind().exit_code()
        }
    }
}
