//! C ABI for the fedhap library.
//!
//! Every entry point is panic-safe: panics are caught at the boundary and
//! reported as `FedhapStatus::Panic`. Fallible calls return a status code and
//! store a human-readable message retrievable via [`fedhap_last_error_message`]
//! (thread-local, valid until the next fedhap call on the same thread).
//!
//! Handles returned through out-parameters are owned by the caller and must be
//! released with the matching `_free` function. All string arguments are
//! NUL-terminated UTF-8.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fedhap::data::{generate_synthetic, load_csv, save_csv, Dataset, SyntheticSpec};
use fedhap::runner::{execute_run, RunConfig, RunSummary};
use fedhap::Error;

/// Outcome of a fedhap call. `Ok` is zero; every failure is nonzero and leaves
/// a message in the thread-local error slot.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedhapStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    Config = 3,
    Usage = 4,
    Training = 5,
    Domain = 6,
    Protocol = 7,
    Parse = 8,
    Io = 9,
    Json = 10,
    /// An internal panic was caught at the ABI boundary.
    Panic = 11,
}

/// Opaque handle to an in-memory dataset.
pub struct FedhapDataset {
    inner: Dataset,
}

/// Opaque handle to the results of a completed run.
pub struct FedhapRunResult {
    summary: RunSummary,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    // Interior NULs cannot come from our error strings, but stay total anyway.
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default());
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::default());
}

fn status_of(err: &Error) -> FedhapStatus {
    match err {
        Error::Config(_) => FedhapStatus::Config,
        Error::Usage(_) => FedhapStatus::Usage,
        Error::Training(_) => FedhapStatus::Training,
        Error::Domain(_) => FedhapStatus::Domain,
        Error::Protocol(_) => FedhapStatus::Protocol,
        Error::Parse { .. } => FedhapStatus::Parse,
        Error::Io(_) => FedhapStatus::Io,
        Error::Json(_) => FedhapStatus::Json,
    }
}

fn report(err: &Error) -> FedhapStatus {
    set_error(&err.to_string());
    status_of(err)
}

/// Runs `body` with panic containment and error-slot bookkeeping.
fn guarded<F: FnOnce() -> FedhapStatus>(body: F) -> FedhapStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_error(&format!("internal panic: {detail}"));
            FedhapStatus::Panic
        }
    }
}

/// SAFETY: `ptr` must be NULL or a NUL-terminated string valid for reads.
unsafe fn required_str<'a>(ptr: *const c_char) -> Result<&'a str, FedhapStatus> {
    if ptr.is_null() {
        set_error("required string argument was NULL");
        return Err(FedhapStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument was not valid UTF-8");
        FedhapStatus::InvalidUtf8
    })
}

fn require_out<T>(out: *mut T) -> Result<(), FedhapStatus> {
    if out.is_null() {
        set_error("out-parameter was NULL");
        return Err(FedhapStatus::NullArgument);
    }
    Ok(())
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fedhap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the message for the most recent error on this thread, or an empty
/// string if the last call succeeded. The pointer stays valid until the next
/// fedhap call on the same thread.
#[no_mangle]
pub extern "C" fn fedhap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Releases a string returned by a fedhap function. NULL is a no-op.
///
/// # Safety
/// `s` must be NULL or a pointer previously returned by this library and not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedhap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset from a CSV file. On success writes a new handle to `out`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn fedhap_dataset_load_csv(
    path: *const c_char,
    out: *mut *mut FedhapDataset,
) -> FedhapStatus {
    guarded(|| {
        if let Err(status) = require_out(out) {
            return status;
        }
        let path = match required_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_csv(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FedhapDataset { inner }));
                clear_error();
                FedhapStatus::Ok
            }
            Err(err) => report(&err),
        }
    })
}

/// Generates a synthetic dataset from a JSON spec (same schema as the CLI's
/// `synthetic` config block). On success writes a new handle to `out`.
///
/// # Safety
/// `spec_json` must be a valid NUL-terminated string; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn fedhap_dataset_generate(
    spec_json: *const c_char,
    out: *mut *mut FedhapDataset,
) -> FedhapStatus {
    guarded(|| {
        if let Err(status) = require_out(out) {
            return status;
        }
        let text = match required_str(spec_json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let spec: SyntheticSpec = match serde_json::from_str(text) {
            Ok(spec) => spec,
            Err(err) => return report(&Error::from(err)),
        };
        match generate_synthetic(&spec) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(FedhapDataset { inner }));
                clear_error();
                FedhapStatus::Ok
            }
            Err(err) => report(&err),
        }
    })
}

/// Writes a dataset to a CSV file in the format `fedhap_dataset_load_csv`
/// reads.
///
/// # Safety
/// `dataset` must be a live handle from this library; `path` must be a valid
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedhap_dataset_save_csv(
    dataset: *const FedhapDataset,
    path: *const c_char,
) -> FedhapStatus {
    guarded(|| {
        if dataset.is_null() {
            set_error("dataset handle was NULL");
            return FedhapStatus::NullArgument;
        }
        let path = match required_str(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match save_csv(&(*dataset).inner, Path::new(path)) {
            Ok(()) => {
                clear_error();
                FedhapStatus::Ok
            }
            Err(err) => report(&err),
        }
    })
}

/// Number of samples in the dataset. Returns 0 on a NULL handle.
///
/// # Safety
/// `dataset` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedhap_dataset_samples(dataset: *const FedhapDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.len()
}

/// Feature dimension of the dataset. Returns 0 on a NULL handle.
///
/// # Safety
/// `dataset` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedhap_dataset_dim(dataset: *const FedhapDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.dim()
}

/// Number of label classes in the dataset. Returns 0 on a NULL handle.
///
/// # Safety
/// `dataset` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedhap_dataset_classes(dataset: *const FedhapDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.classes()
}

/// Releases a dataset handle. NULL is a no-op.
///
/// # Safety
/// `dataset` must be NULL or a live handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedhap_dataset_free(dataset: *mut FedhapDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Executes a full federated run from a JSON config (same schema as the CLI's
/// `run --config` file) and writes reports into `out_dir`. `jobs` caps worker
/// threads; pass 0 to size the pool automatically. On success writes a new
/// result handle to `out`.
///
/// # Safety
/// `config_json` and `out_dir` must be valid NUL-terminated strings; `out`
/// must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fedhap_run_json(
    config_json: *const c_char,
    out_dir: *const c_char,
    jobs: usize,
    out: *mut *mut FedhapRunResult,
) -> FedhapStatus {
    guarded(|| {
        if let Err(status) = require_out(out) {
            return status;
        }
        let text = match required_str(config_json) {
            Ok(t) => t,
            Err(status) => return status,
        };
        let dir = match required_str(out_dir) {
            Ok(d) => d,
            Err(status) => return status,
        };
        let cfg = match RunConfig::from_json_str(text) {
            Ok(cfg) => cfg,
            Err(err) => return report(&err),
        };
        let jobs = if jobs == 0 { None } else { Some(jobs) };
        match execute_run(&cfg, Path::new(dir), jobs) {
            Ok(summary) => {
                *out = Box::into_raw(Box::new(FedhapRunResult { summary }));
                clear_error();
                FedhapStatus::Ok
            }
            Err(err) => report(&err),
        }
    })
}

/// Mean average precision of the final model. Returns NaN on a NULL handle.
///
/// # Safety
/// `result` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedhap_result_final_map(result: *const FedhapRunResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).summary.final_map
}

/// Mean average precision of the untrained round-0 model. Returns NaN on a
/// NULL handle.
///
/// # Safety
/// `result` must be NULL or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn fedhap_result_round0_map(result: *const FedhapRunResult) -> f64 {
    if result.is_null() {
        return f64::NAN;
    }
    (*result).summary.round0_map
}

/// Serializes the full run summary (final metrics, PR curve, top-N table) as
/// an owned JSON string. Free it with `fedhap_string_free`.
///
/// # Safety
/// `result` must be a live handle from this library; `out` must be valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn fedhap_result_summary_json(
    result: *const FedhapRunResult,
    out: *mut *mut c_char,
) -> FedhapStatus {
    guarded(|| {
        if let Err(status) = require_out(out) {
            return status;
        }
        if result.is_null() {
            set_error("result handle was NULL");
            return FedhapStatus::NullArgument;
        }
        let json = match serde_json::to_string_pretty(&(*result).summary) {
            Ok(json) => json,
            Err(err) => return report(&Error::from(err)),
        };
        match CString::new(json) {
            Ok(owned) => {
                *out = owned.into_raw();
                clear_error();
                FedhapStatus::Ok
            }
            Err(_) => {
                set_error("summary JSON contained an interior NUL");
                FedhapStatus::Json
            }
        }
    })
}

/// Releases a run-result handle. NULL is a no-op.
///
/// # Safety
/// `result` must be NULL or a live handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fedhap_result_free(result: *mut FedhapRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
