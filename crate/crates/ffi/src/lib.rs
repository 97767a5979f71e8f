//! C interface to `dfm-core`.
//!
//! Objects cross the boundary as opaque handles created by a `*_new` or
//! `*_load` call and released with the matching `*_free`. Every fallible
//! call returns a [`DfmStatus`]; on failure the message is available from
//! [`dfm_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;
use std::sync::Arc;

use dfm_core::ensemble::{sample_ensemble, Ensemble, MlpRouter, Router, SamplerConfig, Strategy, VelocityField};
use dfm_core::eval::{sliced_wasserstein, PointCloud};
use dfm_core::flow::{AnalyticalFlow, Dataset, Schedule, ScheduleKind};
use dfm_core::numerics::Rng;
use dfm_core::training::{Checkpoint, FlopLedger, Role};
use dfm_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfmStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad argument or usage, such as an unknown strategy name.
    InvalidArgument = 2,
    /// Checkpoints or settings that do not fit together.
    Config = 3,
    /// Numerical failure: non-finite values, degenerate inputs.
    Numerical = 4,
    Worker = 5,
    Io = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfmSchedule {
    Linear = 0,
    Cosine = 1,
}

impl From<DfmSchedule> for ScheduleKind {
    fn from(s: DfmSchedule) -> Self {
        match s {
            DfmSchedule::Linear => ScheduleKind::Linear,
            DfmSchedule::Cosine => ScheduleKind::Cosine,
        }
    }
}

/// Exact flows of a labelled point set.
pub struct DfmFlow {
    flow: Arc<AnalyticalFlow>,
}

/// Experts plus router, analytical or loaded from checkpoints.
pub struct DfmEnsemble {
    ensemble: Ensemble,
    schedule: Schedule,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DfmStatus {
    match e {
        Error::Usage(_) | Error::Argument(_) => DfmStatus::InvalidArgument,
        Error::Config(_) | Error::Shape { .. } => DfmStatus::Config,
        Error::Degenerate(_) | Error::Domain(_) | Error::Sampling { .. } => DfmStatus::Numerical,
        Error::Worker { .. } => DfmStatus::Worker,
        _ => DfmStatus::Io,
    }
}

/// Run `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DfmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfmStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            DfmStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            DfmStatus::Panic
        }
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn arg(msg: impl Into<String>) -> Fail {
    Fail::Core(Error::Argument(msg.into()))
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn str_in<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| arg(format!("{what} is not UTF-8")))
}

/// NaN means "not given".
fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dfm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dfm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Build the exact flow of `n` points of dimension `dim` (row-major).
/// `labels` may be null for an unpartitioned set; otherwise it holds `n`
/// cluster indices below `k`.
///
/// # Safety
/// `points` must hold `n * dim` doubles, `labels` (if non-null) `n` values,
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfm_flow_new(
    points: *const f64,
    n: usize,
    dim: usize,
    labels: *const usize,
    k: usize,
    schedule: DfmSchedule,
    out: *mut *mut DfmFlow,
) -> DfmStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let pts = slice_in(points, n.checked_mul(dim).ok_or_else(|| arg("size overflow"))?, "points")?;
        let mut ds = Dataset::from_flat(pts.to_vec(), dim)?;
        if !labels.is_null() {
            ds = ds.with_labels(slice::from_raw_parts(labels, n).to_vec(), k)?;
        }
        let flow = AnalyticalFlow::new(ds, Schedule::new(schedule.into()));
        *out = Box::into_raw(Box::new(DfmFlow { flow: Arc::new(flow) }));
        Ok(())
    })
}

/// # Safety
/// `flow` must come from [`dfm_flow_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dfm_flow_free(flow: *mut DfmFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}

unsafe fn flow_call(
    flow: *const DfmFlow,
    x: *const f64,
    out: *mut f64,
    out_len: impl FnOnce(&AnalyticalFlow) -> usize,
    f: impl FnOnce(&AnalyticalFlow, &[f64]) -> dfm_core::Result<Vec<f64>>,
) -> DfmStatus {
    guard(|| {
        let flow = flow.as_ref().ok_or(Fail::Null("flow"))?;
        let x = slice_in(x, flow.flow.dim(), "x")?;
        let n = out_len(&flow.flow);
        let v = f(&flow.flow, x)?;
        slice_out(out, n, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Exact marginal velocity at `(x, t)`; `x` and `out` hold `dim` doubles.
///
/// # Safety
/// `flow` must be live and the buffers sized as described.
#[no_mangle]
pub unsafe extern "C" fn dfm_flow_marginal(flow: *const DfmFlow, x: *const f64, t: f64, out: *mut f64) -> DfmStatus {
    flow_call(flow, x, out, |f| f.dim(), |f, x| f.marginal_flow(x, t))
}

/// Exact score of the noised marginal at `(x, t)`.
///
/// # Safety
/// As for [`dfm_flow_marginal`].
#[no_mangle]
pub unsafe extern "C" fn dfm_flow_score(flow: *const DfmFlow, x: *const f64, t: f64, out: *mut f64) -> DfmStatus {
    flow_call(flow, x, out, |f| f.dim(), |f, x| f.marginal_score(x, t))
}

/// Exact flow of cluster `k`.
///
/// # Safety
/// As for [`dfm_flow_marginal`].
#[no_mangle]
pub unsafe extern "C" fn dfm_flow_expert(
    flow: *const DfmFlow,
    k: usize,
    x: *const f64,
    t: f64,
    out: *mut f64,
) -> DfmStatus {
    flow_call(flow, x, out, |f| f.dim(), |f, x| f.expert_flow(k, x, t))
}

/// Cluster posterior at `(x, t)`; `out` holds `k` doubles.
///
/// # Safety
/// As for [`dfm_flow_marginal`], with `out` sized to the cluster count.
#[no_mangle]
pub unsafe extern "C" fn dfm_flow_posterior(flow: *const DfmFlow, x: *const f64, t: f64, out: *mut f64) -> DfmStatus {
    flow_call(flow, x, out, |f| f.num_clusters(), |f, x| f.router_posterior(x, t))
}

/// Ensemble of the exact experts and router of a labelled flow. The flow
/// handle stays owned by the caller.
///
/// # Safety
/// `flow` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dfm_ensemble_from_flow(flow: *const DfmFlow, out: *mut *mut DfmEnsemble) -> DfmStatus {
    guard(|| {
        let flow = flow.as_ref().ok_or(Fail::Null("flow"))?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let ensemble = Ensemble::analytical(flow.flow.clone())?;
        *out = Box::into_raw(Box::new(DfmEnsemble {
            ensemble,
            schedule: *flow.flow.schedule(),
        }));
        Ok(())
    })
}

/// Load `checkpoints/expert_<i>.json` for `i < k` and `checkpoints/router.json`
/// from a run directory; `checkpoints/monolith.json` is added when present.
///
/// # Safety
/// `run_dir` must be a NUL-terminated path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dfm_ensemble_load(
    run_dir: *const c_char,
    k: usize,
    schedule: DfmSchedule,
    out: *mut *mut DfmEnsemble,
) -> DfmStatus {
    guard(|| {
        let dir = Path::new(str_in(run_dir, "run_dir")?).join("checkpoints");
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let kind: ScheduleKind = schedule.into();
        let load = |stem: &str, role: Role, k: usize| -> dfm_core::Result<Checkpoint> {
            let ckpt = Checkpoint::load(&dir.join(format!("{stem}.json")))?;
            ckpt.expect(role, k, kind)?;
            Ok(ckpt)
        };
        let mut experts: Vec<Box<dyn VelocityField>> = Vec::with_capacity(k);
        let mut t_min = dfm_core::flow::DEFAULT_T_MIN;
        for i in 0..k {
            let ckpt = load(&format!("expert_{i}"), Role::Expert, k)?;
            t_min = ckpt.t_min;
            experts.push(Box::new(ckpt.model()?));
        }
        let router = load("router", Role::Router, k)?;
        let router: Box<dyn Router> = Box::new(MlpRouter(router.model()?));
        let mut ensemble = Ensemble::new(experts, Some(router))?;
        if dir.join("monolith.json").exists() {
            ensemble = ensemble.with_monolith(Box::new(load("monolith", Role::Monolith, 1)?.model()?));
        }
        *out = Box::into_raw(Box::new(DfmEnsemble {
            ensemble,
            schedule: Schedule::with_t_min(kind, t_min)?,
        }));
        Ok(())
    })
}

/// # Safety
/// `ensemble` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dfm_ensemble_free(ensemble: *mut DfmEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Number of experts, or 0 for a null handle.
///
/// # Safety
/// `ensemble` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn dfm_ensemble_num_experts(ensemble: *const DfmEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.ensemble.num_experts())
}

/// Draw `n` samples with `steps` Euler steps under the named strategy
/// (`full`, `top-2`, `threshold`, ...). `param` is `tau` for threshold and
/// `p` for nucleus; pass NaN for the defaults, and likewise for
/// `temperature`. `labels` (length `n_labels`) is required for `oracle` and
/// may be null otherwise. `out` receives `n * dim` doubles.
///
/// # Safety
/// All pointers must be valid for the sizes described.
#[no_mangle]
pub unsafe extern "C" fn dfm_ensemble_sample(
    ensemble: *const DfmEnsemble,
    strategy: *const c_char,
    param: f64,
    temperature: f64,
    labels: *const usize,
    n_labels: usize,
    n: usize,
    steps: usize,
    seed: u64,
    out: *mut f64,
) -> DfmStatus {
    guard(|| {
        let e = ensemble.as_ref().ok_or(Fail::Null("ensemble"))?;
        let name = str_in(strategy, "strategy")?;
        let s = Strategy::parse(name, opt(param), opt(param), opt(temperature))?;
        let labels = if labels.is_null() { None } else { Some(slice_in(labels, n_labels, "labels")?) };
        let config = SamplerConfig {
            steps,
            t_min: e.schedule.t_min,
            ..SamplerConfig::new(seed)
        };
        let set = sample_ensemble(&e.ensemble, &s, labels, n, &config, &e.schedule)?;
        slice_out(out, set.points.len(), "out")?.copy_from_slice(&set.points);
        Ok(())
    })
}

/// Per-step cost of a strategy with `k` experts, given per-forward costs.
/// Threshold selection has no fixed cost and yields `InvalidArgument`.
///
/// # Safety
/// `strategy` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dfm_strategy_cost(
    expert_cost: u64,
    router_cost: u64,
    k: usize,
    strategy: *const c_char,
    out: *mut u64,
) -> DfmStatus {
    guard(|| {
        let s = Strategy::parse(str_in(strategy, "strategy")?, Some(0.0), None, None)?;
        s.validate(Some(k))?;
        let cost = FlopLedger::new(expert_cost, router_cost)
            .cost(&s, k)
            .ok_or_else(|| arg(format!("{s} has no fixed per-step cost")))?;
        *out.as_mut().ok_or(Fail::Null("out"))? = cost;
        Ok(())
    })
}

/// Sliced Wasserstein distance between two row-major point sets.
///
/// # Safety
/// `a` holds `n_a * dim` doubles, `b` holds `n_b * dim`, `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn dfm_sliced_wasserstein(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    dim: usize,
    n_projections: usize,
    seed: u64,
    out: *mut f64,
) -> DfmStatus {
    guard(|| {
        let a = PointCloud::new(slice_in(a, n_a * dim, "a")?.to_vec(), dim)?;
        let b = PointCloud::new(slice_in(b, n_b * dim, "b")?.to_vec(), dim)?;
        let v = sliced_wasserstein(&a, &b, n_projections, &mut Rng::new(seed))?;
        *out.as_mut().ok_or(Fail::Null("out"))? = v;
        Ok(())
    })
}
