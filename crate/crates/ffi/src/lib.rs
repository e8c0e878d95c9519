//! C ABI for moe2-core.
//!
//! Objects cross the boundary as opaque handles created by `*_from_json` or
//! `*_new` and released by the matching `*_free`. Every fallible function
//! returns a [`Moe2Status`]; on failure [`moe2_last_error`] describes it.
//! Strings returned to the caller are freed with [`moe2_string_free`].
//! Handles may be shared between threads for reading; the error message is
//! per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use moe2_core::costs::{CostParams, CostTable};
use moe2_core::gating::{GatingDataset, GatingParams};
use moe2_core::inference::{generate_answer, top_k_weights, InferenceConfig};
use moe2_core::io;
use moe2_core::smo::{select_subset, ObjectiveMode, SmoConfig};
use moe2_core::{ConstraintSet, Error, Fleet, SubsetMask, Workload};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Moe2Status {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    /// No nonempty subset satisfies the constraints.
    Infeasible = 4,
    Internal = 5,
}

/// Expert fleet.
pub struct Moe2Fleet(Fleet);
/// Prompt workload with its token model.
pub struct Moe2Workload(Workload);
/// Trained gating network.
pub struct Moe2Gating(GatingParams);
/// Per-class deadlines and an energy budget.
pub struct Moe2Constraints(ConstraintSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(Moe2Status, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Infeasible(_) => Moe2Status::Infeasible,
            Error::Invalid(_)
            | Error::EmptySubset
            | Error::Dimension { .. }
            | Error::StepOutOfRange { .. }
            | Error::Schema { .. }
            | Error::Json(_) => Moe2Status::InvalidInput,
            _ => Moe2Status::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(Moe2Status::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(Moe2Status::InvalidInput, msg.into())
}

/// Runs `f`, records any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> Moe2Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Moe2Status::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            Moe2Status::Internal
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(Moe2Status::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn mask(n: usize, bits: u64) -> Result<SubsetMask, Failure> {
    Ok(SubsetMask::from_bits(n, bits)?)
}

fn instance_check(workload: &Workload, fleet: &Fleet) -> Result<(), Failure> {
    if fleet.n_clusters() != workload.n_clusters {
        return Err(invalid(format!(
            "fleet covers {} clusters but the workload has {}",
            fleet.n_clusters(),
            workload.n_clusters
        )));
    }
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn moe2_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn moe2_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn moe2_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a fleet document (as written by `moe2 gen-workload`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe2_fleet_from_json(json: *const c_char, out: *mut *mut Moe2Fleet) -> Moe2Status {
    guard(|| {
        let fleet = io::parse_fleet(text(json, "json")?.as_bytes(), "fleet")?;
        put(out, Moe2Fleet(fleet), "out")
    })
}

/// Number of experts, or 0 for a null handle.
///
/// # Safety
/// `fleet` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe2_fleet_len(fleet: *const Moe2Fleet) -> usize {
    fleet.as_ref().map_or(0, |f| f.0.len())
}

/// # Safety
/// `fleet` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn moe2_fleet_free(fleet: *mut Moe2Fleet) {
    release(fleet)
}

/// Parses and validates a workload document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe2_workload_from_json(json: *const c_char, out: *mut *mut Moe2Workload) -> Moe2Status {
    guard(|| {
        let w = io::parse_workload(text(json, "json")?.as_bytes(), "workload")?;
        put(out, Moe2Workload(w), "out")
    })
}

/// Number of prompts, or 0 for a null handle.
///
/// # Safety
/// `workload` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe2_workload_len(workload: *const Moe2Workload) -> usize {
    workload.as_ref().map_or(0, |w| w.0.prompts.len())
}

/// Number of application classes, or 0 for a null handle.
///
/// # Safety
/// `workload` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn moe2_workload_n_classes(workload: *const Moe2Workload) -> usize {
    workload.as_ref().map_or(0, |w| w.0.n_app_classes)
}

/// # Safety
/// `workload` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn moe2_workload_free(workload: *mut Moe2Workload) {
    release(workload)
}

/// Parses gating parameters (`theta.json`).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe2_gating_from_json(json: *const c_char, out: *mut *mut Moe2Gating) -> Moe2Status {
    guard(|| {
        let theta = io::parse_params(text(json, "json")?.as_bytes(), "gating")?;
        put(out, Moe2Gating(theta), "out")
    })
}

/// Positive gate scores for one embedding. `scores` must hold as many
/// entries as the gate has experts.
///
/// # Safety
/// `x` must point to `x_len` doubles and `scores` to `scores_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn moe2_gating_scores(
    gating: *const Moe2Gating,
    x: *const f64,
    x_len: usize,
    scores: *mut f64,
    scores_len: usize,
) -> Moe2Status {
    guard(|| {
        let g = deref(gating, "gating")?;
        let x = slice(x, x_len, "x")?;
        if scores.is_null() {
            return Err(null("scores"));
        }
        let s = moe2_core::inference::gate_scores(&g.0, x)?;
        if s.len() != scores_len {
            return Err(invalid(format!("gate has {} outputs, buffer holds {scores_len}", s.len())));
        }
        std::slice::from_raw_parts_mut(scores, scores_len).copy_from_slice(&s);
        Ok(())
    })
}

/// # Safety
/// `gating` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn moe2_gating_free(gating: *mut Moe2Gating) {
    release(gating)
}

/// Constraint set with one deadline per application class.
///
/// # Safety
/// `tau_max` must point to `n_classes` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe2_constraints_new(
    tau_max: *const f64,
    n_classes: usize,
    e_max: f64,
    out: *mut *mut Moe2Constraints,
) -> Moe2Status {
    guard(|| {
        let c = ConstraintSet::new(slice(tau_max, n_classes, "tau_max")?.to_vec(), e_max)?;
        put(out, Moe2Constraints(c), "out")
    })
}

/// # Safety
/// `constraints` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn moe2_constraints_free(constraints: *mut Moe2Constraints) {
    release(constraints)
}

/// Whether the subset in `mask` (bit i = expert i) meets every deadline and
/// the energy budget on average over `workload`.
///
/// # Safety
/// Handles must be live; `feasible` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe2_is_feasible(
    workload: *const Moe2Workload,
    fleet: *const Moe2Fleet,
    constraints: *const Moe2Constraints,
    mask_bits: u64,
    feasible: *mut bool,
) -> Moe2Status {
    guard(|| {
        let (w, f, c) = (deref(workload, "workload")?, deref(fleet, "fleet")?, deref(constraints, "constraints")?);
        if feasible.is_null() {
            return Err(null("feasible"));
        }
        let s = mask(f.0.len(), mask_bits)?;
        let report = moe2_core::costs::is_feasible(s, &c.0, &w.0, &f.0, &CostParams::default())?;
        *feasible = report.feasible;
        Ok(())
    })
}

/// Selects the best feasible subset by monotonic optimization. With a gate
/// the objective is the gate's restricted loss; with `gating` null each
/// subset's weights are re-optimised per prompt. Returns
/// [`Moe2Status::Infeasible`] when no nonempty subset qualifies.
///
/// # Safety
/// `workload`, `fleet` and `constraints` must be live; `gating` may be null;
/// `mask_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe2_select_subset(
    workload: *const Moe2Workload,
    fleet: *const Moe2Fleet,
    gating: *const Moe2Gating,
    constraints: *const Moe2Constraints,
    epsilon: f64,
    mask_out: *mut u64,
) -> Moe2Status {
    guard(|| {
        let (w, f, c) = (deref(workload, "workload")?, deref(fleet, "fleet")?, deref(constraints, "constraints")?);
        if mask_out.is_null() {
            return Err(null("mask_out"));
        }
        instance_check(&w.0, &f.0)?;
        let theta = gating.as_ref().map(|g| &g.0);
        let config = SmoConfig {
            epsilon,
            objective: if theta.is_some() { ObjectiveMode::Restricted } else { ObjectiveMode::Tabular },
            ..SmoConfig::default()
        };
        let data = GatingDataset::from_workload(&w.0, &f.0)?;
        let table = CostTable::new(&w.0, &f.0, &CostParams::default())?;
        let out = select_subset(&data, theta, &table, &c.0, &config)?;
        *mask_out = out.mask.bits();
        Ok(())
    })
}

/// The `k` highest-scoring members of `mask` and their renormalised weights,
/// in descending score order. `experts` and `weights` must hold `k` entries.
///
/// # Safety
/// `scores` must point to `n` doubles; `experts` and `weights` to `k` writable entries.
#[no_mangle]
pub unsafe extern "C" fn moe2_top_k(
    scores: *const f64,
    n: usize,
    mask_bits: u64,
    k: usize,
    experts: *mut usize,
    weights: *mut f64,
) -> Moe2Status {
    guard(|| {
        let scores = slice(scores, n, "scores")?;
        if experts.is_null() || weights.is_null() {
            return Err(null("output buffer"));
        }
        let (gamma, w) = top_k_weights(scores, mask(n, mask_bits)?, k)?;
        std::slice::from_raw_parts_mut(experts, k).copy_from_slice(&gamma);
        std::slice::from_raw_parts_mut(weights, k).copy_from_slice(&w);
        Ok(())
    })
}

/// Greedy top-k decoding of prompt `prompt_index`; the result is a JSON
/// object (tokens, queried experts, weights, costs) to be released with
/// [`moe2_string_free`].
///
/// # Safety
/// Handles must be live; `json_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn moe2_infer_json(
    gating: *const Moe2Gating,
    workload: *const Moe2Workload,
    fleet: *const Moe2Fleet,
    prompt_index: usize,
    mask_bits: u64,
    k: usize,
    json_out: *mut *mut c_char,
) -> Moe2Status {
    guard(|| {
        let (g, w, f) = (deref(gating, "gating")?, deref(workload, "workload")?, deref(fleet, "fleet")?);
        if json_out.is_null() {
            return Err(null("json_out"));
        }
        instance_check(&w.0, &f.0)?;
        let prompt = w.0.prompts.get(prompt_index).ok_or_else(|| {
            invalid(format!("prompt index {prompt_index} out of range for {} prompts", w.0.prompts.len()))
        })?;
        let config = InferenceConfig { k, ..InferenceConfig::default() };
        let generation = generate_answer(
            &g.0,
            mask(f.0.len(), mask_bits)?,
            prompt,
            &f.0,
            &w.0.token_model,
            &CostParams::default(),
            &config,
        )?;
        let json = serde_json::to_string(&generation).map_err(|e| Failure(Moe2Status::Internal, e.to_string()))?;
        *json_out = CString::new(json).map_err(|e| Failure(Moe2Status::Internal, e.to_string()))?.into_raw();
        Ok(())
    })
}
