//! Contrastive transfer loss: NT-Xent over two augmented views plus a KL
//! regularizer between paired rows, with exact analytic gradients.
//!
//! The two views are fused into a `2n`-point batch. Point `a` is paired with
//! `a ± n`; its term is `-log(exp(s_ap / tau) / sum_{k != a} exp(s_ak / tau))`
//! with cosine similarities `s`. The loss is the mean over all `2n` anchors.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::norm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    /// First view, `n x d`.
    pub z_t: Vec<Vec<f64>>,
    /// Second view; row `i` is the positive of `z_t[i]`.
    pub z_tp: Vec<Vec<f64>>,
}

impl ContrastiveBatch {
    pub fn new(z_t: Vec<Vec<f64>>, z_tp: Vec<Vec<f64>>) -> Result<Self> {
        if z_t.is_empty() || z_t.len() != z_tp.len() {
            return Err(Error::param(format!(
                "views need equal nonzero row counts, got {} and {}",
                z_t.len(),
                z_tp.len()
            )));
        }
        let d = z_t[0].len();
        if d == 0 || z_t.iter().chain(&z_tp).any(|r| r.len() != d) {
            return Err(Error::param("all feature rows must share a nonzero dimension"));
        }
        if z_t.iter().chain(&z_tp).flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { id: "contrastive batch".into() });
        }
        Ok(ContrastiveBatch { z_t, z_tp })
    }

    pub fn n(&self) -> usize {
        self.z_t.len()
    }

    pub fn dim(&self) -> usize {
        self.z_t[0].len()
    }

    fn fused(&self) -> Vec<&[f64]> {
        self.z_t.iter().chain(&self.z_tp).map(Vec::as_slice).collect()
    }
}

/// Which points enter each anchor's softmax denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Denominator {
    /// All `2n - 1` other points, positive included.
    #[default]
    AllOthers,
    /// Only the `2n - 2` negatives.
    NegativesOnly,
}

/// Loss value and gradients with respect to both views.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_t: Vec<Vec<f64>>,
    pub grad_tp: Vec<Vec<f64>>,
}

impl LossGrad {
    pub fn grad_norm(&self) -> f64 {
        self.grad_t
            .iter()
            .chain(&self.grad_tp)
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// NT-Xent value and gradient.
pub fn nt_xent_with(batch: &ContrastiveBatch, tau: f64, mode: Denominator) -> Result<LossGrad> {
    if !(tau > 0.0) {
        return Err(Error::param("tau must be > 0"));
    }
    let n = batch.n();
    let pts = batch.fused();
    let total = 2 * n;
    if mode == Denominator::NegativesOnly && n < 2 {
        return Err(Error::param("negatives-only denominator needs n >= 2"));
    }
    let mut units = Vec::with_capacity(total);
    let mut norms = Vec::with_capacity(total);
    for (a, p) in pts.iter().enumerate() {
        let len = norm(p);
        if len == 0.0 {
            return Err(Error::ZeroVector {
                id: format!("batch row {a}"),
            });
        }
        norms.push(len);
        units.push(p.iter().map(|x| x / len).collect::<Vec<f64>>());
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut sim = vec![vec![0.0; total]; total];
    for a in 0..total {
        for b in a..total {
            let s = dot(&units[a], &units[b]);
            sim[a][b] = s;
            sim[b][a] = s;
        }
    }
    let partner = |a: usize| if a < n { a + n } else { a - n };
    let in_denominator = |a: usize, k: usize| {
        k != a && (mode == Denominator::AllOthers || k != partner(a))
    };

    // dL/ds_ak, accumulated per anchor.
    let scale = 1.0 / total as f64;
    let mut loss = 0.0;
    let mut ds = vec![vec![0.0; total]; total];
    for a in 0..total {
        let logits = (0..total)
            .filter(|&k| in_denominator(a, k))
            .map(|k| sim[a][k] / tau);
        let lse = log_sum_exp(logits);
        let p = partner(a);
        loss += lse - sim[a][p] / tau;
        for k in 0..total {
            if in_denominator(a, k) {
                ds[a][k] += scale / tau * (sim[a][k] / tau - lse).exp();
            }
        }
        ds[a][p] -= scale / tau;
    }
    loss *= scale;

    // Chain through s_ak = u_a . u_k and u = x / |x|.
    let d = batch.dim();
    let mut grads = Vec::with_capacity(total);
    for a in 0..total {
        let mut du = vec![0.0; d];
        for k in 0..total {
            let coef = ds[a][k] + ds[k][a];
            if coef == 0.0 {
                continue;
            }
            if k == a {
                // s_aa never enters the loss.
                continue;
            }
            for (g, u) in du.iter_mut().zip(&units[k]) {
                *g += coef * u;
            }
        }
        let radial = dot(&du, &units[a]);
        grads.push(
            du.iter()
                .zip(&units[a])
                .map(|(g, u)| (g - radial * u) / norms[a])
                .collect::<Vec<f64>>(),
        );
    }
    let grad_tp = grads.split_off(n);
    Ok(LossGrad {
        loss,
        grad_t: grads,
        grad_tp,
    })
}

pub fn nt_xent_loss(batch: &ContrastiveBatch, tau: f64) -> Result<f64> {
    nt_xent_with(batch, tau, Denominator::AllOthers).map(|r| r.loss)
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(v.iter().copied());
    v.iter().map(|x| (x - lse).exp()).collect()
}

/// Mean over pairs of `KL(softmax(z_t[i]) || softmax(z_tp[i]))`, with
/// gradients.
pub fn kl_with_grad(batch: &ContrastiveBatch) -> LossGrad {
    let n = batch.n() as f64;
    let mut loss = 0.0;
    let mut grad_t = Vec::with_capacity(batch.n());
    let mut grad_tp = Vec::with_capacity(batch.n());
    for (a, b) in batch.z_t.iter().zip(&batch.z_tp) {
        let lse_a = log_sum_exp(a.iter().copied());
        let lse_b = log_sum_exp(b.iter().copied());
        let p = softmax(a);
        let q = softmax(b);
        // KL = sum_j p_j (a_j - b_j) - lse(a) + lse(b)
        let mean_gap: f64 = p.iter().zip(a.iter().zip(b)).map(|(pj, (x, y))| pj * (x - y)).sum();
        loss += mean_gap - lse_a + lse_b;
        grad_t.push(
            p.iter()
                .zip(a.iter().zip(b))
                .map(|(pj, (x, y))| pj * ((x - y) - mean_gap) / n)
                .collect(),
        );
        grad_tp.push(p.iter().zip(&q).map(|(pj, qj)| (qj - pj) / n).collect());
    }
    LossGrad {
        loss: (loss / n).max(0.0),
        grad_t,
        grad_tp,
    }
}

pub fn kl_regularizer(batch: &ContrastiveBatch) -> f64 {
    kl_with_grad(batch).loss
}

/// `nt_xent + lambda * kl` with its gradient.
pub fn ut_loss_and_grad(batch: &ContrastiveBatch, tau: f64, lambda: f64) -> Result<LossGrad> {
    ut_loss_and_grad_with(batch, tau, lambda, Denominator::AllOthers)
}

pub fn ut_loss_and_grad_with(
    batch: &ContrastiveBatch,
    tau: f64,
    lambda: f64,
    mode: Denominator,
) -> Result<LossGrad> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::param("lambda must be >= 0"));
    }
    let mut out = nt_xent_with(batch, tau, mode)?;
    if lambda == 0.0 {
        return Ok(out);
    }
    let kl = kl_with_grad(batch);
    out.loss += lambda * kl.loss;
    for (dst, src) in out
        .grad_t
        .iter_mut()
        .chain(out.grad_tp.iter_mut())
        .zip(kl.grad_t.iter().chain(&kl.grad_tp))
    {
        for (g, k) in dst.iter_mut().zip(src) {
            *g += lambda * k;
        }
    }
    Ok(out)
}

/// Reads a two-view CSV with header `id,view,f0,...`; `view` is `1` or `2`
/// and each id must appear once in each view. Pairs are ordered by first
/// appearance.
pub fn load_views(path: impl AsRef<Path>) -> Result<ContrastiveBatch> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "view" {
        return Err(Error::Parse {
            line: 1,
            message: "header must be `id,view,f0,...`".into(),
        });
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, [Option<Vec<f64>>; 2]> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let view = match &record[1] {
            "1" => 0,
            "2" => 1,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("view must be 1 or 2, got `{other}`"),
                })
            }
        };
        let vector = (2..record.len())
            .map(|k| {
                record[k].parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad float `{}`", &record[k]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let id = record[0].to_string();
        let slot = rows.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            [None, None]
        });
        if slot[view].replace(vector).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate view {} for `{id}`", view + 1),
            });
        }
    }
    let mut z_t = Vec::new();
    let mut z_tp = Vec::new();
    for id in order {
        let [a, b] = rows.remove(&id).unwrap_or([None, None]);
        match (a, b) {
            (Some(a), Some(b)) => {
                z_t.push(a);
                z_tp.push(b);
            }
            _ => {
                return Err(Error::InvalidEpisode(format!("`{id}` is missing a view")));
            }
        }
    }
    ContrastiveBatch::new(z_t, z_tp).map_err(|e| match e {
        Error::Parameter(m) => Error::InvalidEpisode(m),
        other => other,
    })
}
