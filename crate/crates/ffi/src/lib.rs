//! C ABI over the driftscope core.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `*_free`. Every fallible call returns a [`DsStatus`];
//! on failure the message is available from [`ds_last_error_message`]
//! until the next failing call on the same thread. Arrays are row-major
//! and steps are 1-based, matching the Rust API.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use driftscope::alerts::{evaluate_alert_rule, AlertRule};
use driftscope::attribution::{discrete_time_derivatives, integrated_gradients, integrated_gradients_target};
use driftscope::events::StepSeries;
use driftscope::lds::LdSystem;
use driftscope::seqmodel::{forward, Checkpoint, Mode, ModelParams, RiskSeries};
use driftscope::Error;
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    Numeric = 6,
    Panic = 7,
}

/// Trained recurrent model loaded from a checkpoint.
pub struct DsModel {
    params: ModelParams,
}

/// Linear dynamical system with quadratic risk.
pub struct DsLds {
    system: LdSystem,
}

/// Alert rule; times in seconds.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DsAlertRule {
    pub ratio_threshold: f64,
    pub floor: f64,
    pub anchor_time: f64,
    pub horizon: f64,
    pub check_interval: f64,
    pub min_new_events: usize,
    pub first_alert_only: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DsAlert {
    pub t0: usize,
    pub t1: usize,
    pub t0_time: f64,
    pub t1_time: f64,
    pub p0: f64,
    pub p1: f64,
    pub new_events: usize,
}

impl From<DsAlertRule> for AlertRule {
    fn from(r: DsAlertRule) -> Self {
        AlertRule {
            ratio_threshold: r.ratio_threshold,
            floor: r.floor,
            anchor_time: r.anchor_time,
            horizon: r.horizon,
            check_interval: r.check_interval,
            min_new_events: r.min_new_events,
            first_alert_only: r.first_alert_only,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(DsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => DsStatus::Io,
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => DsStatus::Parse,
            Error::Dimension(_) | Error::Window(_) => DsStatus::Dimension,
            Error::NonFinite(_) | Error::Diverged { .. } => DsStatus::Numeric,
            _ => DsStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> DsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DsStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&format!("panic: {message}"));
            DsStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(DsStatus::NullPointer, format!("`{name}` is null"))
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(DsStatus::InvalidArgument, message.into())
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn reference<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

/// Message for the most recent failure on this thread; empty if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ds_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Default alert rule.
#[no_mangle]
pub extern "C" fn ds_alert_rule_default() -> DsAlertRule {
    let r = AlertRule::default();
    DsAlertRule {
        ratio_threshold: r.ratio_threshold,
        floor: r.floor,
        anchor_time: r.anchor_time,
        horizon: r.horizon,
        check_interval: r.check_interval,
        min_new_events: r.min_new_events,
        first_alert_only: r.first_alert_only,
    }
}

// ---------------------------------------------------------------- model

/// Load a JSON checkpoint written by `driftscope train`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_load(path: *const c_char, out: *mut *mut DsModel) -> DsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path).to_str().map_err(|e| invalid(format!("path: {e}")))?;
        let checkpoint = Checkpoint::load(Path::new(path), None)?;
        *out = Box::into_raw(Box::new(DsModel { params: checkpoint.params }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`ds_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ds_model_free(model: *mut DsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input width `d = 2F + 1` expected by the model.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_model_input_dim(model: *const DsModel, out: *mut usize) -> DsStatus {
    guard(|| {
        let model = reference(model, "model")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = model.params.input_dim;
        Ok(())
    })
}

unsafe fn step_series(
    model: &DsModel,
    x: *const f64,
    step_feature: *const usize,
    step_time: *const f64,
    n_steps: usize,
) -> Result<StepSeries, Failure> {
    let d = model.params.input_dim;
    let x = slice(x, n_steps * d, "x")?;
    let feats = slice(step_feature, n_steps, "step_feature")?;
    let times = slice(step_time, n_steps, "step_time")?;
    if d < 3 || d % 2 == 0 {
        return Err(Failure(DsStatus::Dimension, format!("model input width {d} is not 2F + 1")));
    }
    let n_features = (d - 1) / 2;
    let raw = (0..n_steps).map(|t| x[t * d + feats[t].min(n_features - 1)]).collect();
    Ok(StepSeries::from_parts(n_features, x.to_vec(), feats.to_vec(), times.to_vec(), raw)?)
}

/// Per-step risk. `x` is `n_steps x d`; `out_p` receives `n_steps`
/// values and `out_p_base` (nullable) the empty-prefix prediction.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ds_model_forward(
    model: *const DsModel,
    x: *const f64,
    step_feature: *const usize,
    step_time: *const f64,
    n_steps: usize,
    out_p: *mut f64,
    out_p_base: *mut f64,
) -> DsStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let steps = step_series(model, x, step_feature, step_time, n_steps)?;
        let out = slice_mut(out_p, n_steps, "out_p")?;
        let (risk, _) = forward(&model.params, &steps, Mode::Eval)?;
        out.copy_from_slice(&risk.p);
        if !out_p_base.is_null() {
            *out_p_base = risk.p_base;
        }
        Ok(())
    })
}

/// Temporal integrated gradients over the window `(t0, t1]` with `m`
/// midpoint nodes and the carry-forward baseline. `out_attr` receives
/// `n_steps x d` values; `out_target` (nullable) receives `p(x) - p(baseline)`.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ds_model_integrated_gradients(
    model: *const DsModel,
    x: *const f64,
    step_feature: *const usize,
    step_time: *const f64,
    n_steps: usize,
    t0: usize,
    t1: usize,
    m: usize,
    out_attr: *mut f64,
    out_target: *mut f64,
) -> DsStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let steps = step_series(model, x, step_feature, step_time, n_steps)?;
        let out = slice_mut(out_attr, n_steps * steps.dim(), "out_attr")?;
        let attr = integrated_gradients(&model.params, &steps, t0, t1, m)?;
        out.copy_from_slice(attr.as_rows());
        if !out_target.is_null() {
            *out_target = integrated_gradients_target(&model.params, &steps, t0, t1)?;
        }
        Ok(())
    })
}

/// Discrete time derivatives `p_t - p_{t-1}` placed on the active value
/// channel of each step. `out_attr` receives `n_steps x d` values.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ds_model_discrete_time_derivatives(
    model: *const DsModel,
    x: *const f64,
    step_feature: *const usize,
    step_time: *const f64,
    n_steps: usize,
    out_attr: *mut f64,
) -> DsStatus {
    guard(|| {
        let model = reference(model, "model")?;
        let steps = step_series(model, x, step_feature, step_time, n_steps)?;
        let out = slice_mut(out_attr, n_steps * steps.dim(), "out_attr")?;
        let (risk, _) = forward(&model.params, &steps, Mode::Eval)?;
        out.copy_from_slice(discrete_time_derivatives(&risk, &steps)?.as_rows());
        Ok(())
    })
}

// ---------------------------------------------------------------- LDS

/// Build `h_t = A h_{t-1} + B x_t` with risk `0.5 h^T Q h`. `a` is
/// `n x n`, `b` is `n x d`, `h0` has `n` entries, `q` is `n x n` or null
/// for the identity.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_lds_new(
    a: *const f64,
    b: *const f64,
    h0: *const f64,
    q: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut DsLds,
) -> DsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 || d == 0 {
            return Err(Failure(DsStatus::Dimension, "state and input sizes must be positive".into()));
        }
        let a = DMatrix::from_row_slice(n, n, slice(a, n * n, "a")?);
        let b = DMatrix::from_row_slice(n, d, slice(b, n * d, "b")?);
        let h0 = DVector::from_row_slice(slice(h0, n, "h0")?);
        let q = if q.is_null() { None } else { Some(DMatrix::from_row_slice(n, n, slice(q, n * n, "q")?)) };
        *out = Box::into_raw(Box::new(DsLds { system: LdSystem::new(a, b, h0, q)? }));
        Ok(())
    })
}

/// # Safety
/// `lds` must come from [`ds_lds_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ds_lds_free(lds: *mut DsLds) {
    if !lds.is_null() {
        drop(Box::from_raw(lds));
    }
}

unsafe fn lds_rows(lds: &DsLds, x: *const f64, n_steps: usize, name: &str) -> Result<Vec<DVector<f64>>, Failure> {
    let d = lds.system.input_dim();
    let x = slice(x, n_steps * d, name)?;
    Ok(x.chunks(d).map(DVector::from_row_slice).collect())
}

/// Risk after each step; `out_risk` receives `n_steps` values.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ds_lds_run(lds: *const DsLds, x: *const f64, n_steps: usize, out_risk: *mut f64) -> DsStatus {
    guard(|| {
        let lds = reference(lds, "lds")?;
        let rows = lds_rows(lds, x, n_steps, "x")?;
        let out = slice_mut(out_risk, n_steps, "out_risk")?;
        out.copy_from_slice(&lds.system.run(&rows)?.risk);
        Ok(())
    })
}

/// `dp_{t1} / dx_t`; `out_grad` receives `d` values.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ds_lds_input_gradient(
    lds: *const DsLds,
    x: *const f64,
    n_steps: usize,
    t: usize,
    t1: usize,
    out_grad: *mut f64,
) -> DsStatus {
    guard(|| {
        let lds = reference(lds, "lds")?;
        let rows = lds_rows(lds, x, n_steps, "x")?;
        let out = slice_mut(out_grad, lds.system.input_dim(), "out_grad")?;
        let trace = lds.system.run(&rows)?;
        let g = lds.system.input_gradient(&trace, t, t1)?;
        out.copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Exact integrated gradient of `p_{t1}` from `baseline` to `x`;
/// `out_attr` receives `t1 x d` values.
///
/// # Safety
/// Pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ds_lds_integrated_gradient(
    lds: *const DsLds,
    baseline: *const f64,
    x: *const f64,
    n_steps: usize,
    t1: usize,
    out_attr: *mut f64,
) -> DsStatus {
    guard(|| {
        let lds = reference(lds, "lds")?;
        let base = lds_rows(lds, baseline, n_steps, "baseline")?;
        let rows = lds_rows(lds, x, n_steps, "x")?;
        let d = lds.system.input_dim();
        if t1 == 0 || t1 > n_steps {
            return Err(Failure(DsStatus::Dimension, format!("t1 = {t1} outside 1..={n_steps}")));
        }
        let out = slice_mut(out_attr, t1 * d, "out_attr")?;
        let attr = lds.system.integrated_gradient(&base, &rows, t1)?;
        for (chunk, a) in out.chunks_mut(d).zip(&attr) {
            chunk.copy_from_slice(a.as_slice());
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- alerts

/// Evaluate `rule` on a risk series. `out_fired` is set to 1 and `out_alert`
/// filled when the rule fires, otherwise `out_fired` is 0.
///
/// # Safety
/// `p` and `step_time` must hold `n_steps` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ds_evaluate_alert_rule(
    p: *const f64,
    step_time: *const f64,
    n_steps: usize,
    p_base: f64,
    rule: *const DsAlertRule,
    out_fired: *mut i32,
    out_alert: *mut DsAlert,
) -> DsStatus {
    guard(|| {
        let rule: AlertRule = (*reference(rule, "rule")?).into();
        rule.validate()?;
        if out_fired.is_null() {
            return Err(null("out_fired"));
        }
        if out_alert.is_null() {
            return Err(null("out_alert"));
        }
        let p = slice(p, n_steps, "p")?;
        let times = slice(step_time, n_steps, "step_time")?;
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(invalid("step times must be non-decreasing"));
        }
        let risk = RiskSeries {
            p: p.to_vec(),
            logits: p.iter().map(|&v| (v / (1.0 - v)).ln()).collect(),
            step_time: times.to_vec(),
            p_base,
        };
        match evaluate_alert_rule("", &risk, &rule)? {
            Some(a) => {
                *out_fired = 1;
                *out_alert = DsAlert {
                    t0: a.t0,
                    t1: a.t1,
                    t0_time: a.t0_time,
                    t1_time: a.t1_time,
                    p0: a.p0,
                    p1: a.p1,
                    new_events: a.new_events,
                };
            }
            None => {
                *out_fired = 0;
                *out_alert = DsAlert::default();
            }
        }
        Ok(())
    })
}
