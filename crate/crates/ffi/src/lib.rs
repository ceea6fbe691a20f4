//! C interface to the acdt library.
//!
//! Every fallible function returns an [`AcdtStatus`]. On failure the
//! message is kept per thread and can be read with [`acdt_last_error`].
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Panics never unwind into C; they
//! are reported as `ACDT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use acdt::bundle::{load_bundle, save_bundle, ModelBundle};
use acdt::config::RunConfig;
use acdt::data::{load_csv, Dataset, Role};
use acdt::pipeline::run_on;
use acdt::Error;
use nalgebra::{DMatrix, DVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcdtStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// A file could not be read or written.
    Io = 3,
    /// Malformed or unusable input data.
    Dataset = 4,
    /// Invalid parameter or configuration text.
    Config = 5,
    Dimension = 6,
    Numerical = 7,
    /// Unreadable or inconsistent model bundle.
    Bundle = 8,
    /// An output buffer was too small.
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque handle to a dataset.
pub struct AcdtDataset(Dataset);

/// Opaque handle to a fitted model bundle.
pub struct AcdtBundle(ModelBundle);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(AcdtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn status_of(e: &Error) -> AcdtStatus {
    match e {
        Error::Io { .. } => AcdtStatus::Io,
        Error::Csv { .. } | Error::BadCell { .. } | Error::MissingResponse(_) | Error::Dataset(_) => {
            AcdtStatus::Dataset
        }
        Error::InvalidParameter(_) | Error::Config(_) => AcdtStatus::Config,
        Error::Dimension(_) => AcdtStatus::Dimension,
        Error::Numerical(_) => AcdtStatus::Numerical,
        Error::Bundle(_) => AcdtStatus::Bundle,
        Error::Stage { source, .. } => status_of(source),
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AcdtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AcdtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            AcdtStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AcdtStatus::NullArgument, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AcdtStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn optional_text<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn acdt_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn acdt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a CSV with a header row. `response` names the response column and
/// may be null for a dataset without one.
///
/// # Safety
/// `path` and (if non-null) `response` must be NUL-terminated strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acdt_dataset_load_csv(
    path: *const c_char,
    response: *const c_char,
    out: *mut *mut AcdtDataset,
) -> AcdtStatus {
    guard(|| {
        let path = text(path, "path")?;
        let response = optional_text(response, "response")?;
        emit(out, AcdtDataset(load_csv(path, response)?))
    })
}

/// Builds a dataset from a row-major `n_rows × n_cols` feature array and an
/// optional response of length `n_rows` (null for none). Features are named
/// `x1..xp` and the response `y`.
///
/// # Safety
/// `features` must point to `n_rows * n_cols` doubles; `response`, if
/// non-null, to `n_rows` doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acdt_dataset_from_rows(
    features: *const f64,
    n_rows: usize,
    n_cols: usize,
    response: *const f64,
    out: *mut *mut AcdtDataset,
) -> AcdtStatus {
    guard(|| {
        if features.is_null() {
            return Err(null("features"));
        }
        let len = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| Failure(AcdtStatus::Dimension, "feature array size overflows".into()))?;
        let x = DMatrix::from_row_slice(n_rows, n_cols, std::slice::from_raw_parts(features, len));
        let y = (!response.is_null())
            .then(|| DVector::from_column_slice(std::slice::from_raw_parts(response, n_rows)));
        let role = if y.is_some() { Role::Train } else { Role::Test };
        let names = (1..=n_cols).map(|j| format!("x{j}")).collect();
        let response_name = y.is_some().then(|| "y".to_string());
        emit(out, AcdtDataset(Dataset::new(x, y, names, response_name, role)?))
    })
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn acdt_dataset_rows(data: *const AcdtDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.n())
}

/// Number of feature columns, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn acdt_dataset_cols(data: *const AcdtDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.p())
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `data` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acdt_dataset_free(data: *mut AcdtDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Fits the full pipeline. `test` (target rows) and `config` (newline
/// separated `key = value` settings, same keys as the command line) may be
/// null. When `rmse` is non-null it receives the test RMSE in z-scored
/// units, or NaN when the test set has no response.
///
/// # Safety
/// Handles must come from this library; `config`, if non-null, must be a
/// NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acdt_fit(
    train: *const AcdtDataset,
    test: *const AcdtDataset,
    config: *const c_char,
    out: *mut *mut AcdtBundle,
    rmse: *mut f64,
) -> AcdtStatus {
    guard(|| {
        let train = handle(train, "train")?;
        let test = test.as_ref().map(|t| &t.0);
        let mut cfg = RunConfig::default();
        if let Some(text) = optional_text(config, "config")? {
            cfg.apply_text(text, None)?;
        }
        cfg.validate()?;
        let run = run_on(&train.0, test, &cfg)?;
        if let Some(r) = rmse.as_mut() {
            *r = run.evaluation.as_ref().and_then(|e| e.rmse).unwrap_or(f64::NAN);
        }
        emit(out, AcdtBundle(run.fitted.bundle))
    })
}

/// Predicts every row of `data`. `out_raw` receives predictions on the
/// response's original scale and `out_z` (may be null) the z-scored ones;
/// both must hold at least `capacity` values, and `capacity` must be at
/// least the row count.
///
/// # Safety
/// Handles must come from this library; the output buffers must be valid
/// for `capacity` writes.
#[no_mangle]
pub unsafe extern "C" fn acdt_bundle_predict(
    bundle: *const AcdtBundle,
    data: *const AcdtDataset,
    out_raw: *mut f64,
    out_z: *mut f64,
    capacity: usize,
) -> AcdtStatus {
    guard(|| {
        let bundle = handle(bundle, "bundle")?;
        let data = handle(data, "data")?;
        if out_raw.is_null() {
            return Err(null("out_raw"));
        }
        let n = data.0.n();
        if capacity < n {
            return Err(Failure(
                AcdtStatus::BufferTooSmall,
                format!("buffer holds {capacity} values, {n} needed"),
            ));
        }
        let pred = bundle.0.predict(&data.0)?;
        ptr::copy_nonoverlapping(pred.raw.as_ptr(), out_raw, n);
        if !out_z.is_null() {
            ptr::copy_nonoverlapping(pred.z.as_ptr(), out_z, n);
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn acdt_bundle_load(path: *const c_char, out: *mut *mut AcdtBundle) -> AcdtStatus {
    guard(|| {
        let path = text(path, "path")?;
        emit(out, AcdtBundle(load_bundle(path)?))
    })
}

/// # Safety
/// `bundle` must come from this library and `path` be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn acdt_bundle_save(bundle: *const AcdtBundle, path: *const c_char) -> AcdtStatus {
    guard(|| {
        let bundle = handle(bundle, "bundle")?;
        let path = text(path, "path")?;
        Ok(save_bundle(&bundle.0, path)?)
    })
}

/// Number of input features the bundle expects, or 0 for a null handle.
///
/// # Safety
/// `bundle` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn acdt_bundle_features(bundle: *const AcdtBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.0.p())
}

/// Number of latent domains found while fitting, or 0 for a null handle.
///
/// # Safety
/// `bundle` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn acdt_bundle_domains(bundle: *const AcdtBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.0.partition.sizes.len())
}

/// Releases a bundle. Null is ignored.
///
/// # Safety
/// `bundle` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn acdt_bundle_free(bundle: *mut AcdtBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}
