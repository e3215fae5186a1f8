//! C interface to `dpmon`.
//!
//! Specifications and compiled monitors are opaque handles owned by the
//! caller and released with the matching `_free` function. Strings returned
//! by the library are heap allocated and must be released with
//! [`dpm_string_free`]. Every fallible call returns a [`DpmStatus`]; on
//! failure [`dpm_last_error`] describes what went wrong on the calling
//! thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dpmon::privacy::{compile_checked, CompileOptions, Compiled, Heuristic, PlanOptions, PrivacyError};
use dpmon::rational::parse_rational;
use dpmon::runtime::{EvalOptions, Evaluator, NoiseMode};
use dpmon::semantics::{CheckedSpec, Trace};
use dpmon::sensitivity::{AnalysisOptions, Analyzer};
use dpmon::speclang::{parse_compiled, parse_specification};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DpmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Syntax or name-resolution error in a specification.
    ParseError = 3,
    /// Cycles, pacing mismatches and similar.
    SemanticError = 4,
    /// No valid barrier placement, bad budget or weights.
    PrivacyError = 5,
    TraceError = 6,
    EvalError = 7,
    InvalidArgument = 8,
    /// A panic was caught at the boundary.
    Internal = 9,
}

/// A parsed and checked specification.
pub struct DpmSpec {
    inner: CheckedSpec,
}

/// A specification with barriers and noise in place.
pub struct DpmCompiled {
    inner: Compiled,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type FfiResult<T> = Result<T, (DpmStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> DpmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DpmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside dpmon");
            DpmStatus::Internal
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((DpmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (DpmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> FfiResult<()> {
    if p.is_null() {
        Err((DpmStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn privacy_status(e: PrivacyError) -> (DpmStatus, String) {
    let status = match e {
        PrivacyError::Spec(_) => DpmStatus::ParseError,
        PrivacyError::Semantic(_) => DpmStatus::SemanticError,
        _ => DpmStatus::PrivacyError,
    };
    (status, e.to_string())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

/// Message of the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn dpm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn dpm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and checks a specification.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpm_spec_parse(source: *const c_char, out: *mut *mut DpmSpec) -> DpmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let src = text(source, "source")?;
        let spec = parse_specification(src).map_err(|e| (DpmStatus::ParseError, e.to_string()))?;
        let inner = CheckedSpec::new(spec).map_err(|e| (DpmStatus::SemanticError, e.to_string()))?;
        *out = Box::into_raw(Box::new(DpmSpec { inner }));
        Ok(())
    })
}

/// # Safety
/// `spec` must come from [`dpm_spec_parse`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dpm_spec_free(spec: *mut DpmSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Static sensitivity bound of `stream`; infinity when unbounded.
///
/// # Safety
/// `spec` must be a live handle, `stream` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpm_spec_bound(spec: *const DpmSpec, stream: *const c_char, out: *mut f64) -> DpmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let spec = spec.as_ref().ok_or((DpmStatus::NullPointer, "spec is null".to_string()))?;
        let name = text(stream, "stream")?;
        let report = Analyzer::new(&spec.inner, AnalysisOptions::default()).report();
        let r = report.get(name).ok_or_else(|| (DpmStatus::InvalidArgument, format!("no value stream `{name}`")))?;
        *out = r.bound.to_f64();
        Ok(())
    })
}

/// Places barriers with `heuristic` (`input-only`, `deep`, `post-aggregation`, `minimal`)
/// and a total budget `epsilon` given as a decimal or fraction string.
///
/// # Safety
/// `spec` must be a live handle, the strings NUL-terminated and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dpm_compile(
    spec: *const DpmSpec,
    heuristic: *const c_char,
    epsilon: *const c_char,
    tree_aggregation: bool,
    out: *mut *mut DpmCompiled,
) -> DpmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let spec = spec.as_ref().ok_or((DpmStatus::NullPointer, "spec is null".to_string()))?;
        let heuristic: Heuristic = text(heuristic, "heuristic")?.parse().map_err(|e| (DpmStatus::InvalidArgument, e))?;
        let eps = text(epsilon, "epsilon")?;
        let epsilon = parse_rational(eps).ok_or_else(|| (DpmStatus::InvalidArgument, format!("bad epsilon `{eps}`")))?;
        let opts = CompileOptions {
            heuristic,
            epsilon,
            plan: PlanOptions { tree_aggregation, ..Default::default() },
            ..Default::default()
        };
        let inner = compile_checked(spec.inner.clone(), &opts).map_err(privacy_status)?;
        *out = Box::into_raw(Box::new(DpmCompiled { inner }));
        Ok(())
    })
}

/// # Safety
/// `compiled` must come from [`dpm_compile`] and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dpm_compiled_free(compiled: *mut DpmCompiled) {
    if !compiled.is_null() {
        drop(Box::from_raw(compiled));
    }
}

/// The compiled specification text; free with [`dpm_string_free`]. Null on a null handle.
///
/// # Safety
/// `compiled` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dpm_compiled_text(compiled: *const DpmCompiled) -> *mut c_char {
    match compiled.as_ref() {
        Some(c) => into_c_string(c.inner.text.clone()),
        None => ptr::null_mut(),
    }
}

/// The barrier sidecar as JSON; free with [`dpm_string_free`]. Null on a null handle.
///
/// # Safety
/// `compiled` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dpm_compiled_sidecar(compiled: *const DpmCompiled) -> *mut c_char {
    match compiled.as_ref() {
        Some(c) => into_c_string(c.inner.sidecar().to_string()),
        None => ptr::null_mut(),
    }
}

/// Evaluates compiled specification text over a CSV trace up to `horizon`
/// (seconds, as a decimal or fraction string) and writes the releases as JSONL.
///
/// # Safety
/// The strings must be NUL-terminated and `out` a valid pointer. The result
/// must be freed with [`dpm_string_free`].
#[no_mangle]
pub unsafe extern "C" fn dpm_run(
    compiled_text: *const c_char,
    trace_csv: *const c_char,
    horizon: *const c_char,
    seed: u64,
    public_only: bool,
    out: *mut *mut c_char,
) -> DpmStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let spec = parse_compiled(text(compiled_text, "compiled_text")?).map_err(|e| (DpmStatus::ParseError, e.to_string()))?;
        let checked = CheckedSpec::new(spec).map_err(|e| (DpmStatus::SemanticError, e.to_string()))?;
        let trace = Trace::from_csv(&checked.spec, text(trace_csv, "trace_csv")?)
            .map_err(|e| (DpmStatus::TraceError, e.to_string()))?;
        let h = text(horizon, "horizon")?;
        let horizon = parse_rational(h).ok_or_else(|| (DpmStatus::InvalidArgument, format!("bad horizon `{h}`")))?;
        let ev = Evaluator::new(&checked, &trace, &horizon, EvalOptions::default())
            .map_err(|e| (DpmStatus::EvalError, e.to_string()))?;
        *out = into_c_string(ev.run(NoiseMode::Seeded(seed)).to_jsonl(public_only));
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn dpm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
