//! C ABI over `ldpo`.
//!
//! Every function returns an [`LdpoStatus`]. On failure the message is kept
//! per thread and read with [`ldpo_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function. Strings handed out by
//! the library are released with [`ldpo_string_free`]. Label buffers hold
//! `size_t` cluster indices; matrices are row-major `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ldpo::cluster::{kmeans, rim_fit, ClusterAssignment, KMeansConfig, RimConfig};
use ldpo::data::{DescriptorGrid, FeatureMatrix};
use ldpo::encode::{encode_fisher, fit_gmm, GmmCodebook, GmmConfig};
use ldpo::hierarchy::ApConfig;
use ldpo::metrics::{nmi, purity};
use ldpo::pipeline::{reports_to_json, LoopConfig, LoopInputs, Session};
use ldpo::LdpoError;
use ndarray::{Array2, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LdpoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Degenerate = 6,
    NoModel = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Loop configuration plus the outcome of its last run.
pub struct LdpoSession(Session);

/// Fitted diagonal Gaussian mixture for Fisher vector encoding.
pub struct LdpoGmm(GmmCodebook);

struct Failure(LdpoStatus, String);

impl From<LdpoError> for Failure {
    fn from(e: LdpoError) -> Self {
        let status = match &e {
            LdpoError::Io { .. } => LdpoStatus::Io,
            LdpoError::Parse { .. } => LdpoStatus::Parse,
            LdpoError::Config(_) => LdpoStatus::Config,
            LdpoError::Degenerate(_) => LdpoStatus::Degenerate,
            LdpoError::NoConvergedModel => LdpoStatus::NoModel,
            _ => LdpoStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LdpoStatus::NullPointer, format!("{what} is null"))
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LdpoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            LdpoStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {message}"));
            LdpoStatus::Panic
        }
    }
}

unsafe fn matrix<'a>(data: *const f64, rows: usize, cols: usize) -> Result<ArrayView2<'a, f64>, Failure> {
    if data.is_null() {
        return Err(null("data"));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(LdpoStatus::InvalidInput, "matrix size overflows".into()))?;
    let slice = std::slice::from_raw_parts(data, len);
    ArrayView2::from_shape((rows, cols), slice).map_err(|e| Failure(LdpoStatus::InvalidInput, e.to_string()))
}

unsafe fn labels(data: *const usize, n: usize) -> Result<ClusterAssignment, Failure> {
    if data.is_null() {
        return Err(null("labels"));
    }
    Ok(ClusterAssignment::from_labels(std::slice::from_raw_parts(data, n).to_vec()))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_out<T: Copy>(src: &[T], out: *mut T, capacity: usize) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if capacity < src.len() {
        return Err(Failure(
            LdpoStatus::BufferTooSmall,
            format!("buffer holds {capacity}, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Failure(LdpoStatus::InvalidInput, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn ldpo_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn ldpo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fraction of items whose `candidate` cluster's majority `reference` label
/// matches their own.
///
/// # Safety
/// Both label buffers must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ldpo_purity(
    candidate: *const usize,
    reference: *const usize,
    n: usize,
    out: *mut f64,
) -> LdpoStatus {
    guard(|| {
        let v = purity(&labels(candidate, n)?, &labels(reference, n)?)?;
        write_out(out, v)
    })
}

/// Normalized mutual information (geometric normalization).
///
/// # Safety
/// Both label buffers must hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ldpo_nmi(a: *const usize, b: *const usize, n: usize, out: *mut f64) -> LdpoStatus {
    guard(|| {
        let v = nmi(&labels(a, n)?, &labels(b, n)?)?;
        write_out(out, v)
    })
}

/// k-means++ seeded Lloyd iterations, best of `restarts` runs.
///
/// # Safety
/// `data` holds `n * d` values, `labels_out` has room for `n`; `cost_out`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn ldpo_kmeans(
    data: *const f64,
    n: usize,
    d: usize,
    k: usize,
    restarts: usize,
    seed: u64,
    labels_out: *mut usize,
    cost_out: *mut f64,
) -> LdpoStatus {
    guard(|| {
        let x = matrix(data, n, d)?;
        let config = KMeansConfig {
            restarts: restarts.max(1),
            ..KMeansConfig::new(k, seed)
        };
        let (model, a) = kmeans(x, &config)?;
        copy_out(a.labels(), labels_out, n)?;
        if !cost_out.is_null() {
            cost_out.write(model.cost);
        }
        Ok(())
    })
}

/// RIM refinement of `init` at penalty `lambda`. Writes the dense labels
/// and the surviving cluster count.
///
/// # Safety
/// `data` holds `n * d` values; `init` and `labels_out` hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn ldpo_rim(
    data: *const f64,
    n: usize,
    d: usize,
    init: *const usize,
    lambda: f64,
    labels_out: *mut usize,
    k_out: *mut usize,
) -> LdpoStatus {
    guard(|| {
        let x = matrix(data, n, d)?;
        let config = RimConfig {
            lambda,
            ..Default::default()
        };
        let fit = rim_fit(x, &labels(init, n)?, &config)?;
        copy_out(fit.assignment.labels(), labels_out, n)?;
        write_out(k_out, fit.assignment.k())
    })
}

/// Creates a session from loop configuration TOML text.
///
/// # Safety
/// `toml` is a NUL-terminated string; `out` receives the handle.
#[no_mangle]
pub unsafe extern "C" fn ldpo_session_new(toml: *const c_char, out: *mut *mut LdpoSession) -> LdpoStatus {
    guard(|| {
        let config = LoopConfig::from_toml_str(str_arg(toml, "toml")?)?;
        write_out(out, Box::into_raw(Box::new(LdpoSession(Session::new(config)))))
    })
}

/// # Safety
/// `session` comes from [`ldpo_session_new`] or is null.
#[no_mangle]
pub unsafe extern "C" fn ldpo_session_free(session: *mut LdpoSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Runs the loop on the files named in the configuration's input table.
///
/// # Safety
/// `session` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldpo_session_run(session: *mut LdpoSession) -> LdpoStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        s.0.run()?;
        Ok(())
    })
}

/// Runs the loop on an in-memory feature matrix. Items get ids `0..n`.
///
/// # Safety
/// `session` is a live handle and `data` holds `n * d` values.
#[no_mangle]
pub unsafe extern "C" fn ldpo_session_run_features(
    session: *mut LdpoSession,
    data: *const f64,
    n: usize,
    d: usize,
) -> LdpoStatus {
    guard(|| {
        let s = session.as_mut().ok_or_else(|| null("session"))?;
        let values: Array2<f64> = matrix(data, n, d)?.to_owned();
        let features = FeatureMatrix::new((0..n).map(|i| i.to_string()).collect(), values)?;
        s.0.run_with(LoopInputs::from_features(features))?;
        Ok(())
    })
}

/// Number of items and whether the last run converged.
///
/// # Safety
/// `session` is a live handle; the outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn ldpo_session_summary(
    session: *const LdpoSession,
    items_out: *mut usize,
    clusters_out: *mut usize,
    converged_out: *mut bool,
) -> LdpoStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let o = s.0.outcome().ok_or(LdpoError::NoConvergedModel)?;
        if !items_out.is_null() {
            items_out.write(o.ids().len());
        }
        if !clusters_out.is_null() {
            clusters_out.write(o.assignment().k());
        }
        if !converged_out.is_null() {
            converged_out.write(o.converged);
        }
        Ok(())
    })
}

/// Final cluster of every item, in input order.
///
/// # Safety
/// `session` is a live handle and `out` has room for `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn ldpo_session_labels(
    session: *const LdpoSession,
    out: *mut usize,
    capacity: usize,
) -> LdpoStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let o = s.0.outcome().ok_or(LdpoError::NoConvergedModel)?;
        copy_out(o.assignment().labels(), out, capacity)
    })
}

/// Per-iteration reports as a JSON array. Free with [`ldpo_string_free`].
///
/// # Safety
/// `session` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldpo_session_reports_json(session: *const LdpoSession, out: *mut *mut c_char) -> LdpoStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let o = s.0.outcome().ok_or(LdpoError::NoConvergedModel)?;
        write_out(out, owned_string(reports_to_json(&o.reports)))
    })
}

/// Category tree of the last run (default AP settings) as nested JSON.
/// Free with [`ldpo_string_free`].
///
/// # Safety
/// `session` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldpo_session_tree_json(session: *const LdpoSession, out: *mut *mut c_char) -> LdpoStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let tree = s.0.tree(&ApConfig::default())?;
        write_out(out, owned_string(tree.to_json()))
    })
}

/// Fits a `components`-way diagonal GMM to `n` descriptors of length `d`.
///
/// # Safety
/// `data` holds `n * d` values; `out` receives the handle.
#[no_mangle]
pub unsafe extern "C" fn ldpo_gmm_fit(
    data: *const f64,
    n: usize,
    d: usize,
    components: usize,
    seed: u64,
    out: *mut *mut LdpoGmm,
) -> LdpoStatus {
    guard(|| {
        let x = matrix(data, n, d)?;
        let config = GmmConfig {
            components,
            seed,
            ..Default::default()
        };
        let fit = fit_gmm(x, &config)?;
        write_out(out, Box::into_raw(Box::new(LdpoGmm(fit.codebook))))
    })
}

/// # Safety
/// `gmm` comes from [`ldpo_gmm_fit`] or is null.
#[no_mangle]
pub unsafe extern "C" fn ldpo_gmm_free(gmm: *mut LdpoGmm) {
    if !gmm.is_null() {
        drop(Box::from_raw(gmm));
    }
}

/// Fisher vector length, `2 * components * d`.
///
/// # Safety
/// `gmm` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn ldpo_gmm_fv_len(gmm: *const LdpoGmm, out: *mut usize) -> LdpoStatus {
    guard(|| {
        let g = gmm.as_ref().ok_or_else(|| null("gmm"))?;
        write_out(out, 2 * g.0.components() * g.0.dim())
    })
}

/// Normalized Fisher vector of a `side × side` grid of descriptors.
///
/// # Safety
/// `gmm` is a live handle, `grid` holds `side * side * d` values with `d`
/// the GMM's descriptor length, and `out` has room for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn ldpo_gmm_fisher_vector(
    gmm: *const LdpoGmm,
    grid: *const f64,
    side: usize,
    out: *mut f64,
    capacity: usize,
) -> LdpoStatus {
    guard(|| {
        let g = gmm.as_ref().ok_or_else(|| null("gmm"))?;
        let descriptors = matrix(grid, side * side, g.0.dim())?.to_owned();
        let v = encode_fisher(&DescriptorGrid::new("", side, descriptors)?, &g.0)?;
        copy_out(v.as_slice().expect("contiguous"), out, capacity)
    })
}
