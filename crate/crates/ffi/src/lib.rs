//! C ABI for the few-shot Poisson MBO solver.
//!
//! Every fallible function returns a [`PtnStatus`]. On failure a message is
//! stored per thread and can be read with [`ptn_last_error_message`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ptn_core::contrastive::{ut_loss_and_grad, ContrastiveBatch};
use ptn_core::data::load_feature_file;
use ptn_core::{ClassPrior, EpisodeData, Error, ErrorKind, FeaturePoint, Method, SolverConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtnStatus {
    Ok = 0,
    DataError = 1,
    ConfigError = 2,
    NumericalError = 3,
    NullPointer = 4,
    InvalidArgument = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtnMethod {
    /// Calibrated Poisson MBO.
    Ptn = 0,
    /// Same inference as `Ptn`.
    Dpn = 1,
    /// Poisson MBO without query calibration.
    Poisson = 2,
    /// Label propagation baseline.
    Lp = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtnRole {
    Support = 0,
    Unlabeled = 1,
    Query = 2,
}

/// Solver settings.
pub struct PtnConfig {
    inner: SolverConfig,
}

/// A validated episode in canonical order (support, unlabeled, query).
pub struct PtnEpisode {
    inner: EpisodeData,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: PtnStatus, msg: impl Into<String>) -> PtnStatus {
    set_error(msg);
    status
}

fn from_core(err: Error) -> PtnStatus {
    let status = match err.kind() {
        ErrorKind::Data => PtnStatus::DataError,
        ErrorKind::Config => PtnStatus::ConfigError,
        ErrorKind::Numerical => PtnStatus::NumericalError,
    };
    fail(status, err.to_string())
}

fn guard<F: FnOnce() -> PtnStatus>(f: F) -> PtnStatus {
    clear_error();
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PtnStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PtnStatus> {
    if p.is_null() {
        return Err(fail(PtnStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(PtnStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ptn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// New configuration holding the defaults.
#[no_mangle]
pub extern "C" fn ptn_config_new() -> *mut PtnConfig {
    Box::into_raw(Box::new(PtnConfig {
        inner: SolverConfig::default(),
    }))
}

/// # Safety
/// `config` must come from [`ptn_config_new`] and not be freed yet, or be null.
#[no_mangle]
pub unsafe extern "C" fn ptn_config_free(config: *mut PtnConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Sets one key, e.g. `("knn_k", "15")`, then re-validates the whole
/// configuration. On failure the configuration is left unchanged.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ptn_config_set(
    config: *mut PtnConfig,
    key: *const c_char,
    value: *const c_char,
) -> PtnStatus {
    guard(|| {
        let Some(config) = config.as_mut() else {
            return fail(PtnStatus::NullPointer, "config is null");
        };
        let (key, value) = match (str_arg(key, "key"), str_arg(value, "value")) {
            (Ok(k), Ok(v)) => (k, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let mut next = config.inner.clone();
        if let Err(e) = next.set(key, value).and_then(|_| next.validate()) {
            return from_core(e);
        }
        config.inner = next;
        PtnStatus::Ok
    })
}

/// Applies a `key = value` configuration file on top of the current values.
///
/// # Safety
/// `config` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ptn_config_load(config: *mut PtnConfig, path: *const c_char) -> PtnStatus {
    guard(|| {
        let Some(config) = config.as_mut() else {
            return fail(PtnStatus::NullPointer, "config is null");
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(PtnStatus::ConfigError, format!("{path}: {e}")),
        };
        let mut next = config.inner.clone();
        if let Err(e) = next.apply_text(&text).and_then(|_| next.validate()) {
            return from_core(e);
        }
        config.inner = next;
        PtnStatus::Ok
    })
}

/// Builds an episode from `n` row-major feature vectors of length `dim`.
///
/// `roles[i]` is a [`PtnRole`] value; `labels[i]` is the class of a support
/// row and is ignored otherwise. Points get ids `p0`, `p1`, ... by input
/// position.
///
/// # Safety
/// `features` must hold `n * dim` doubles, `roles` and `labels` `n` entries
/// each, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ptn_episode_new(
    features: *const f64,
    roles: *const u8,
    labels: *const i64,
    n: usize,
    dim: usize,
    classes: usize,
    out: *mut *mut PtnEpisode,
) -> PtnStatus {
    guard(|| {
        if features.is_null() || roles.is_null() || labels.is_null() || out.is_null() {
            return fail(PtnStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        if dim == 0 || n == 0 {
            return fail(PtnStatus::InvalidArgument, "n and dim must be positive");
        }
        let feats = slice::from_raw_parts(features, n * dim);
        let roles = slice::from_raw_parts(roles, n);
        let labels = slice::from_raw_parts(labels, n);
        let mut points = Vec::with_capacity(n);
        for i in 0..n {
            let id = format!("p{i}");
            let vector = feats[i * dim..(i + 1) * dim].to_vec();
            let point = match roles[i] {
                0 => {
                    let Ok(label) = usize::try_from(labels[i]) else {
                        return fail(
                            PtnStatus::DataError,
                            format!("point {i}: support label {} is negative", labels[i]),
                        );
                    };
                    FeaturePoint::support(id, label, vector)
                }
                1 => FeaturePoint::unlabeled(id, vector),
                2 => FeaturePoint::query(id, vector),
                r => return fail(PtnStatus::InvalidArgument, format!("point {i}: unknown role {r}")),
            };
            points.push(point);
        }
        match EpisodeData::new(points, classes) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PtnEpisode { inner }));
                PtnStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Loads an episode from a feature CSV (`id,role,label,f0,...`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ptn_episode_load_csv(path: *const c_char, out: *mut *mut PtnEpisode) -> PtnStatus {
    guard(|| {
        if out.is_null() {
            return fail(PtnStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_feature_file(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PtnEpisode { inner }));
                PtnStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// # Safety
/// `episode` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ptn_episode_free(episode: *mut PtnEpisode) {
    if !episode.is_null() {
        drop(Box::from_raw(episode));
    }
}

/// Number of query points, or 0 for a null handle.
///
/// # Safety
/// `episode` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ptn_episode_num_queries(episode: *const PtnEpisode) -> usize {
    episode.as_ref().map_or(0, |e| e.inner.num_query())
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `episode` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ptn_episode_classes(episode: *const PtnEpisode) -> usize {
    episode.as_ref().map_or(0, |e| e.inner.classes())
}

/// Predicts a class for every query, in the order queries were given.
///
/// `calibrate` is -1 for the method default, 0 to disable and 1 to enable
/// query calibration. `prior` may be null for a uniform prior, otherwise it
/// holds one fraction per class. `predictions` must hold `capacity >=`
/// query count entries.
///
/// # Safety
/// Handles must be live; pointer arguments must satisfy the sizes above.
#[no_mangle]
pub unsafe extern "C" fn ptn_infer(
    episode: *const PtnEpisode,
    config: *const PtnConfig,
    method: PtnMethod,
    calibrate: i32,
    prior: *const f64,
    predictions: *mut usize,
    capacity: usize,
) -> PtnStatus {
    guard(|| {
        let (Some(episode), Some(config)) = (episode.as_ref(), config.as_ref()) else {
            return fail(PtnStatus::NullPointer, "episode or config is null");
        };
        if predictions.is_null() {
            return fail(PtnStatus::NullPointer, "predictions is null");
        }
        let ep = &episode.inner;
        if capacity < ep.num_query() {
            return fail(
                PtnStatus::InvalidArgument,
                format!("capacity {capacity} < {} queries", ep.num_query()),
            );
        }
        let calibrate = match calibrate {
            -1 => None,
            0 => Some(false),
            1 => Some(true),
            other => return fail(PtnStatus::InvalidArgument, format!("calibrate must be -1, 0 or 1, got {other}")),
        };
        let prior = if prior.is_null() {
            ClassPrior::uniform(ep.classes())
        } else {
            match ClassPrior::new(slice::from_raw_parts(prior, ep.classes()).to_vec()) {
                Ok(p) => p,
                Err(e) => return from_core(e),
            }
        };
        let method = match method {
            PtnMethod::Ptn => Method::Ptn,
            PtnMethod::Dpn => Method::Dpn,
            PtnMethod::Poisson => Method::Poisson,
            PtnMethod::Lp => Method::Lp,
        };
        match ptn_core::infer(ep, &config.inner, method, &prior, calibrate) {
            Ok(result) => {
                let out = slice::from_raw_parts_mut(predictions, capacity);
                out[..result.predictions.len()].copy_from_slice(&result.predictions);
                PtnStatus::Ok
            }
            Err(e) => from_core(e),
        }
    })
}

/// Evaluates the transfer loss (contrastive plus `lambda` times KL) on two
/// `n x dim` row-major views. Gradients are written when the output
/// pointers are non-null; each must then hold `n * dim` doubles.
///
/// # Safety
/// `z_t` and `z_tp` must hold `n * dim` doubles; `loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ptn_ut_loss(
    z_t: *const f64,
    z_tp: *const f64,
    n: usize,
    dim: usize,
    tau: f64,
    lambda: f64,
    loss: *mut f64,
    grad_t: *mut f64,
    grad_tp: *mut f64,
) -> PtnStatus {
    guard(|| {
        if z_t.is_null() || z_tp.is_null() || loss.is_null() {
            return fail(PtnStatus::NullPointer, "null argument");
        }
        if n == 0 || dim == 0 {
            return fail(PtnStatus::InvalidArgument, "n and dim must be positive");
        }
        let rows = |p: *const f64| -> Vec<Vec<f64>> {
            slice::from_raw_parts(p, n * dim).chunks(dim).map(<[f64]>::to_vec).collect()
        };
        let batch = match ContrastiveBatch::new(rows(z_t), rows(z_tp)) {
            Ok(b) => b,
            Err(e) => return from_core(e),
        };
        let result = match ut_loss_and_grad(&batch, tau, lambda) {
            Ok(r) => r,
            Err(e) => return from_core(e),
        };
        *loss = result.loss;
        for (dst, src) in [(grad_t, &result.grad_t), (grad_tp, &result.grad_tp)] {
            if !dst.is_null() {
                let out = slice::from_raw_parts_mut(dst, n * dim);
                for (chunk, row) in out.chunks_mut(dim).zip(src) {
                    chunk.copy_from_slice(row);
                }
            }
        }
        PtnStatus::Ok
    })
}
