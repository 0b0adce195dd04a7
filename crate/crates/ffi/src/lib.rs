//! C ABI over the router and the pure cost and theory helpers.
//!
//! Every fallible call returns a [`BrStatus`]; on failure a description is
//! available from [`br_last_error_message`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.
//!
//! Strings passed in must be NUL-terminated UTF-8. Strings returned as
//! `const char *` are borrowed from a handle and live as long as it does;
//! strings returned as `char *` are owned by the caller and released with
//! [`br_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::str::FromStr;

use bootroute::client::ModelClient;
use bootroute::config::{load_config, load_config_file, ConfigFormat, RouterConfig};
use bootroute::cost::{optimal_k, pareto_frontier, present_currency, ParetoPoint};
use bootroute::error::RouteError;
use bootroute::pipeline::Router;
use bootroute::theory::cumulative_error;
use bootroute::types::{Query, RoutingTrace};
use rust_decimal::prelude::ToPrimitive;
use rust_decimal::Decimal;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    NoEligibleModels = 5,
    /// Every candidate failed; a partial trace is still returned.
    AllCandidatesFailed = 6,
    Runtime = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: BrStatus, message: impl Into<String>) -> BrStatus {
    set_error(message);
    status
}

/// Runs `f`, turning a panic into [`BrStatus::Panic`].
fn guard(f: impl FnOnce() -> BrStatus) -> BrStatus {
    clear_error();
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(BrStatus::Panic, "internal panic"))
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn br_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, BrStatus> {
    if s.is_null() {
        return Err(fail(BrStatus::NullArgument, format!("{name} is NULL")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(BrStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// A router with its own async runtime.
pub struct BrRouter {
    runtime: tokio::runtime::Runtime,
    router: Router,
}

/// A routing trace with cached string views.
pub struct BrTrace {
    trace: RoutingTrace,
    final_text: CString,
    cost: CString,
}

impl BrTrace {
    fn new(trace: RoutingTrace) -> Self {
        let final_text = CString::new(trace.final_text.replace('\0', "")).unwrap_or_default();
        let cost = CString::new(present_currency(trace.ledger.totals().currency).to_string()).unwrap_or_default();
        Self { trace, final_text, cost }
    }
}

fn make_router(config: RouterConfig, out: *mut *mut BrRouter) -> BrStatus {
    let client = match ModelClient::from_config(&config) {
        Ok(c) => c,
        Err(e) => return fail(BrStatus::Config, e.to_string()),
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => return fail(BrStatus::Runtime, e.to_string()),
    };
    let handle = Box::new(BrRouter {
        runtime,
        router: Router::new(client, config),
    });
    // SAFETY: caller checked `out` is non-null.
    unsafe { *out = Box::into_raw(handle) };
    BrStatus::Ok
}

/// Creates a router from a TOML or JSON config file.
///
/// # Safety
/// `path` must be a valid C string; `out_router` must be writable.
#[no_mangle]
pub unsafe extern "C" fn br_router_new_from_file(path: *const c_char, out_router: *mut *mut BrRouter) -> BrStatus {
    guard(|| {
        if out_router.is_null() {
            return fail(BrStatus::NullArgument, "out_router is NULL");
        }
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_config_file(Path::new(path)) {
            Ok(config) => make_router(config, out_router),
            Err(e) => fail(BrStatus::Config, e.to_string()),
        }
    })
}

/// Creates a router from config text; `is_toml` selects TOML over JSON. A
/// relative `mock_scripts` path resolves against the working directory.
///
/// # Safety
/// `source` must be a valid C string; `out_router` must be writable.
#[no_mangle]
pub unsafe extern "C" fn br_router_new_from_str(
    source: *const c_char,
    is_toml: bool,
    out_router: *mut *mut BrRouter,
) -> BrStatus {
    guard(|| {
        if out_router.is_null() {
            return fail(BrStatus::NullArgument, "out_router is NULL");
        }
        let source = match str_arg(source, "source") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let format = if is_toml { ConfigFormat::Toml } else { ConfigFormat::Json };
        match load_config(source, format) {
            Ok(config) => make_router(config, out_router),
            Err(e) => fail(BrStatus::Config, e.to_string()),
        }
    })
}

/// # Safety
/// `router` must be NULL or a handle from `br_router_new_*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn br_router_free(router: *mut BrRouter) {
    if !router.is_null() {
        drop(Box::from_raw(router));
    }
}

/// Routes one query. On [`BrStatus::Ok`] and [`BrStatus::AllCandidatesFailed`]
/// `*out_trace` receives a trace (partial in the latter case); otherwise it
/// is set to NULL.
///
/// # Safety
/// `router` must be a live handle; `query_id` and `text` valid C strings;
/// `out_trace` writable.
#[no_mangle]
pub unsafe extern "C" fn br_route(
    router: *const BrRouter,
    query_id: *const c_char,
    text: *const c_char,
    out_trace: *mut *mut BrTrace,
) -> BrStatus {
    guard(|| {
        if router.is_null() || out_trace.is_null() {
            return fail(BrStatus::NullArgument, "router and out_trace must be non-NULL");
        }
        *out_trace = ptr::null_mut();
        let (query_id, text) = match (str_arg(query_id, "query_id"), str_arg(text, "text")) {
            (Ok(q), Ok(t)) => (q, t),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let r = &*router;
        let query = Query::new(query_id, text);
        match r.runtime.block_on(r.router.route(&query)) {
            Ok(trace) => {
                *out_trace = Box::into_raw(Box::new(BrTrace::new(trace)));
                BrStatus::Ok
            }
            Err(RouteError::AllCandidatesFailed { layer, trace }) => {
                *out_trace = Box::into_raw(Box::new(BrTrace::new(*trace)));
                fail(BrStatus::AllCandidatesFailed, format!("all candidates failed in layer {layer}"))
            }
            Err(e @ RouteError::NoEligibleModels) => fail(BrStatus::NoEligibleModels, e.to_string()),
            Err(e @ RouteError::Config(_)) => fail(BrStatus::Config, e.to_string()),
            Err(e) => fail(BrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Final answer, borrowed from the trace.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn br_trace_final_text(trace: *const BrTrace) -> *const c_char {
    trace.as_ref().map_or(ptr::null(), |t| t.final_text.as_ptr())
}

/// Total cost as a decimal string rounded to 6 places, borrowed from the trace.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn br_trace_cost(trace: *const BrTrace) -> *const c_char {
    trace.as_ref().map_or(ptr::null(), |t| t.cost.as_ptr())
}

/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn br_trace_call_count(trace: *const BrTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.trace.call_count())
}

/// Prompt plus completion tokens over every call.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn br_trace_total_tokens(trace: *const BrTrace) -> u64 {
    trace.as_ref().map_or(0, |t| t.trace.ledger.totals().tokens)
}

/// The full trace as JSON; free with [`br_string_free`]. NULL on failure.
///
/// # Safety
/// `trace` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn br_trace_to_json(trace: *const BrTrace) -> *mut c_char {
    let Some(t) = trace.as_ref() else {
        set_error("trace is NULL");
        return ptr::null_mut();
    };
    serde_json::to_string(&t.trace)
        .ok()
        .and_then(|s| CString::new(s).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// # Safety
/// `trace` must be NULL or a handle from [`br_route`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn br_trace_free(trace: *mut BrTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `s` must be NULL or a string returned as `char *` by this library.
#[no_mangle]
pub unsafe extern "C" fn br_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `ptr` must point to `len` readable values when `len > 0`.
unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], BrStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail(BrStatus::NullArgument, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Best k for `scores[i]`, `costs[i]` describing k = i + 1. Ties go to the
/// smaller k.
///
/// # Safety
/// `scores` and `costs` must each hold `len` values; `out_k` must be writable.
#[no_mangle]
pub unsafe extern "C" fn br_optimal_k(
    scores: *const f64,
    costs: *const f64,
    len: usize,
    lambda: f64,
    out_k: *mut usize,
) -> BrStatus {
    guard(|| {
        if out_k.is_null() {
            return fail(BrStatus::NullArgument, "out_k is NULL");
        }
        let (scores, costs) = match (slice_arg(scores, len, "scores"), slice_arg(costs, len, "costs")) {
            (Ok(s), Ok(c)) => (s, c),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let s = scores.iter().enumerate().map(|(i, v)| (i + 1, *v)).collect();
        let c = costs.iter().enumerate().map(|(i, v)| (i + 1, *v)).collect();
        match optimal_k(&s, &c, lambda) {
            Ok(k) => {
                *out_k = k;
                BrStatus::Ok
            }
            Err(e) => fail(BrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// `1 − Π values`, with each value read at its shortest decimal form so that
/// `{0.9, 0.9}` gives exactly 0.19.
///
/// # Safety
/// `values` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn br_cumulative_error(values: *const f64, len: usize, out: *mut f64) -> BrStatus {
    guard(|| {
        if out.is_null() {
            return fail(BrStatus::NullArgument, "out is NULL");
        }
        let values = match slice_arg(values, len, "values") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let mut decimals = Vec::with_capacity(values.len());
        for v in values {
            match Decimal::from_str(&v.to_string()) {
                Ok(d) => decimals.push(d),
                Err(_) => return fail(BrStatus::InvalidArgument, format!("{v} is not a finite decimal")),
            }
        }
        match cumulative_error(&decimals) {
            Ok(e) => {
                *out = e.to_f64().unwrap_or(f64::NAN);
                BrStatus::Ok
            }
            Err(e) => fail(BrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Marks each point on the score/cost Pareto frontier: `out_mask[i]` is 1 if
/// point i is undominated, else 0.
///
/// # Safety
/// `scores` and `costs` must hold `len` values; `out_mask` must have room
/// for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn br_pareto_frontier(
    scores: *const f64,
    costs: *const f64,
    len: usize,
    out_mask: *mut u8,
) -> BrStatus {
    guard(|| {
        let (scores, costs) = match (slice_arg(scores, len, "scores"), slice_arg(costs, len, "costs")) {
            (Ok(s), Ok(c)) => (s, c),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        if len > 0 && out_mask.is_null() {
            return fail(BrStatus::NullArgument, "out_mask is NULL");
        }
        let points: Vec<ParetoPoint> = scores
            .iter()
            .zip(costs)
            .enumerate()
            .map(|(i, (s, c))| ParetoPoint::new(i.to_string(), *s, *c))
            .collect();
        let frontier = pareto_frontier(&points);
        for (i, p) in points.iter().enumerate() {
            *out_mask.add(i) = u8::from(frontier.iter().any(|f| f.label == p.label));
        }
        BrStatus::Ok
    })
}
