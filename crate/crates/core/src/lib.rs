//! Semi-supervised label inference for few-shot episodes.
//!
//! Given labeled support, extra unlabeled, and query feature vectors, the
//! pipeline normalizes features, removes the support/query mean offset,
//! builds a kNN Gaussian graph, propagates labels with graph Poisson
//! learning, and refines the result with volume-constrained MBO threshold
//! dynamics. A label propagation baseline, a contrastive transfer loss
//! kernel, and an episode benchmark harness are included.

pub mod calibration;
pub mod cli;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod episodes;
pub mod error;
pub mod graph;
pub mod lp;
pub mod mbo;
pub mod pipeline;
pub mod poisson;
pub mod synth;

pub use config::SolverConfig;
pub use data::{ClassPrior, EpisodeData, FeaturePoint, LabelMatrix, Role};
pub use error::{Error, ErrorKind, Result};
pub use graph::SparseGraph;
pub use pipeline::{infer, Inference, Method};
