//! C ABI for the warpreg curve-registration library.
//!
//! Handles are opaque pointers created and destroyed here; every fallible
//! call returns a [`WarpregStatus`] and leaves a human-readable message
//! retrievable with [`warpreg_last_error_message`] on failure. Buffers are
//! caller-allocated; sizes can be queried first.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use warpreg::clustering::kmeans_warps;
use warpreg::model::{simulate, Curve, Dataset, Scenario};
use warpreg::saem::{fit, predict, FitResult, SaemConfig};
use warpreg::splines::BasisSpec;

/// Result codes of the C API.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum WarpregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    NumericalError = 4,
    IoError = 5,
    NotFound = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque dataset handle.
pub struct WarpregDataset {
    inner: Dataset,
}

/// Opaque fitted-model handle.
pub struct WarpregFit {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &warpreg::Error) -> WarpregStatus {
    match err.category() {
        "invalid-input" | "config" => WarpregStatus::InvalidArgument,
        "format" => WarpregStatus::InvalidData,
        "numerical" => WarpregStatus::NumericalError,
        "unknown-curve" => WarpregStatus::NotFound,
        "io" => WarpregStatus::IoError,
        _ => WarpregStatus::NumericalError,
    }
}

fn fail(err: &warpreg::Error) -> WarpregStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn guarded<F: FnOnce() -> WarpregStatus>(f: F) -> WarpregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            WarpregStatus::Panic
        }
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn warpreg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Static version string of the library.
#[no_mangle]
pub extern "C" fn warpreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Free a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be a pointer previously returned by a `warpreg_*` function that
/// documents this free routine, and must not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn warpreg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load a dataset from a long-format CSV file (header `curve_id,t,y`).
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must be a valid
/// pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn warpreg_dataset_from_csv(
    path: *const c_char,
    out: *mut *mut WarpregDataset,
) -> WarpregStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(p) => p,
        Err(_) => {
            set_error("path is not valid UTF-8");
            return WarpregStatus::InvalidArgument;
        }
    };
    guarded(|| match warpreg::cli::ingest_csv(Path::new(path)) {
        Ok(dataset) => {
            *out = Box::into_raw(Box::new(WarpregDataset { inner: dataset }));
            WarpregStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// Build a dataset from flattened arrays: curve `i` owns
/// `points_per_curve[i]` consecutive (t, y) pairs. Times must be strictly
/// increasing within each curve and lie in [0, 1]. Curves are named
/// "c001", "c002", ...
///
/// # Safety
/// `points_per_curve` must hold `n_curves` readable entries and `ts`/`ys`
/// must hold their sum; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn warpreg_dataset_from_arrays(
    n_curves: usize,
    points_per_curve: *const usize,
    ts: *const f64,
    ys: *const f64,
    out: *mut *mut WarpregDataset,
) -> WarpregStatus {
    if points_per_curve.is_null() || ts.is_null() || ys.is_null() || out.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    let counts = std::slice::from_raw_parts(points_per_curve, n_curves);
    let total: usize = counts.iter().sum();
    let ts = std::slice::from_raw_parts(ts, total);
    let ys = std::slice::from_raw_parts(ys, total);
    guarded(|| {
        let mut curves = Vec::with_capacity(n_curves);
        let mut offset = 0usize;
        for (i, &n) in counts.iter().enumerate() {
            let curve = Curve::new(
                format!("c{:03}", i + 1),
                ts[offset..offset + n].to_vec(),
                ys[offset..offset + n].to_vec(),
            );
            match curve {
                Ok(c) => curves.push(c),
                Err(e) => return fail(&e),
            }
            offset += n;
        }
        match Dataset::new(curves) {
            Ok(dataset) => {
                *out = Box::into_raw(Box::new(WarpregDataset { inner: dataset }));
                WarpregStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Simulate a benchmark scenario (1 or 2) into a new dataset handle.
///
/// # Safety
/// `out` must be a valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn warpreg_dataset_simulate(
    scenario: c_int,
    n_curves: usize,
    n_points: usize,
    seed: u64,
    out: *mut *mut WarpregDataset,
) -> WarpregStatus {
    if out.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    let scenario = match scenario {
        1 => Scenario::Shape1,
        2 => Scenario::Shape2,
        other => {
            set_error(&format!("unknown scenario {other} (expected 1 or 2)"));
            return WarpregStatus::InvalidArgument;
        }
    };
    guarded(|| {
        let (basis_f, basis_h) = scenario.bases();
        let params = scenario.params();
        match simulate(&params, &basis_f, &basis_h, n_curves, n_points, seed) {
            Ok((dataset, _)) => {
                *out = Box::into_raw(Box::new(WarpregDataset { inner: dataset }));
                WarpregStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of curves in a dataset; zero for a null handle.
///
/// # Safety
/// `dataset` must be a live handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn warpreg_dataset_num_curves(dataset: *const WarpregDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.num_curves()
}

/// Destroy a dataset handle. Null is ignored.
///
/// # Safety
/// `dataset` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn warpreg_dataset_free(dataset: *mut WarpregDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Fit the registration model. `iters` counts post-burn-in iterations;
/// pass zeros to use the defaults (2000 burn-in, 10000 iterations,
/// exponent 0.75, 5 inner sweeps).
///
/// # Safety
/// `dataset` must be a live dataset handle; `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn warpreg_fit_run(
    dataset: *const WarpregDataset,
    shape_basis_size: usize,
    warp_basis_size: usize,
    burn_in: usize,
    iters: usize,
    step_exponent: f64,
    n_inner: usize,
    seed: u64,
    out: *mut *mut WarpregFit,
) -> WarpregStatus {
    if dataset.is_null() || out.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    let dataset = &(*dataset).inner;
    guarded(|| {
        let defaults = SaemConfig::default();
        let burn_in = if burn_in == 0 { defaults.burn_in } else { burn_in };
        let iters = if iters == 0 {
            defaults.total_iters - defaults.burn_in
        } else {
            iters
        };
        let config = SaemConfig {
            burn_in,
            total_iters: burn_in + iters,
            step_exponent: if step_exponent == 0.0 {
                defaults.step_exponent
            } else {
                step_exponent
            },
            n_inner: if n_inner == 0 { defaults.n_inner } else { n_inner },
            seed,
            ..defaults
        };
        let basis_f = match BasisSpec::new(shape_basis_size, 4) {
            Ok(b) => b,
            Err(e) => return fail(&e),
        };
        let basis_h = match BasisSpec::new(warp_basis_size, 4) {
            Ok(b) => b,
            Err(e) => return fail(&e),
        };
        match fit(dataset, &basis_f, &basis_h, &config) {
            Ok(result) => {
                *out = Box::into_raw(Box::new(WarpregFit { inner: result }));
                WarpregStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of fitted curves; zero for a null handle.
///
/// # Safety
/// `fit` must be a live fit handle or null.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_num_curves(fit: *const WarpregFit) -> usize {
    if fit.is_null() {
        return 0;
    }
    (*fit).inner.curves.len()
}

/// Number of shape coefficients in a fit; zero for a null handle.
///
/// # Safety
/// `fit` must be a live fit handle or null.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_num_shape_coeffs(fit: *const WarpregFit) -> usize {
    if fit.is_null() {
        return 0;
    }
    (*fit).inner.params.shape_coeffs().len()
}

/// Number of warp increments per curve; zero for a null handle.
///
/// # Safety
/// `fit` must be a live fit handle or null.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_num_warp_increments(fit: *const WarpregFit) -> usize {
    if fit.is_null() {
        return 0;
    }
    (*fit).inner.params.num_warp_increments()
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> WarpregStatus {
    if buf.is_null() {
        set_error("null buffer");
        return WarpregStatus::NullPointer;
    }
    if len < values.len() {
        set_error(&format!("buffer holds {len} values, need {}", values.len()));
        return WarpregStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    WarpregStatus::Ok
}

/// Copy the estimated shape coefficients into `buf`.
///
/// # Safety
/// `fit` must be a live fit handle; `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_shape_coeffs(
    fit: *const WarpregFit,
    buf: *mut f64,
    len: usize,
) -> WarpregStatus {
    if fit.is_null() {
        set_error("null fit handle");
        return WarpregStatus::NullPointer;
    }
    copy_out((*fit).inner.params.shape_coeffs().as_slice(), buf, len)
}

/// Estimated noise variance.
///
/// # Safety
/// `fit` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_noise_var(
    fit: *const WarpregFit,
    out: *mut f64,
) -> WarpregStatus {
    if fit.is_null() || out.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    *out = (*fit).inner.params.noise_var();
    WarpregStatus::Ok
}

/// Estimated Dirichlet concentration.
///
/// # Safety
/// `fit` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_concentration(
    fit: *const WarpregFit,
    out: *mut f64,
) -> WarpregStatus {
    if fit.is_null() || out.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    *out = (*fit).inner.params.concentration();
    WarpregStatus::Ok
}

/// Estimated amplitude covariance, row-major 2x2 (4 values).
///
/// # Safety
/// `fit` must be a live fit handle; `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_amp_cov(
    fit: *const WarpregFit,
    buf: *mut f64,
    len: usize,
) -> WarpregStatus {
    if fit.is_null() {
        set_error("null fit handle");
        return WarpregStatus::NullPointer;
    }
    let c = (*fit).inner.params.amp_cov();
    copy_out(&[c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]], buf, len)
}

/// Copy one curve's conditional-mean warp increments into `buf`.
///
/// # Safety
/// `fit` must be a live fit handle; `buf` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_warp_increments(
    fit: *const WarpregFit,
    curve_index: usize,
    buf: *mut f64,
    len: usize,
) -> WarpregStatus {
    if fit.is_null() {
        set_error("null fit handle");
        return WarpregStatus::NullPointer;
    }
    let curves = &(*fit).inner.curves;
    match curves.get(curve_index) {
        Some(cf) => copy_out(&cf.warp_increments, buf, len),
        None => {
            set_error(&format!(
                "curve index {curve_index} out of range ({} curves)",
                curves.len()
            ));
            WarpregStatus::NotFound
        }
    }
}

/// Post-burn-in acceptance rate of one curve's warp sampler.
///
/// # Safety
/// `fit` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_accept_rate(
    fit: *const WarpregFit,
    curve_index: usize,
    out: *mut f64,
) -> WarpregStatus {
    if fit.is_null() || out.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    let curves = &(*fit).inner.curves;
    match curves.get(curve_index) {
        Some(cf) => {
            *out = cf.accept_rate;
            WarpregStatus::Ok
        }
        None => {
            set_error(&format!("curve index {curve_index} out of range"));
            WarpregStatus::NotFound
        }
    }
}

/// Curve id at an index as a newly allocated string; free with
/// [`warpreg_string_free`]. Null on a bad index or handle.
///
/// # Safety
/// `fit` must be a live fit handle or null.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_curve_id(
    fit: *const WarpregFit,
    curve_index: usize,
) -> *mut c_char {
    if fit.is_null() {
        return std::ptr::null_mut();
    }
    let curves = &(*fit).inner.curves;
    curves
        .get(curve_index)
        .and_then(|cf| CString::new(cf.id.clone()).ok())
        .map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Evaluate the fitted curve and predicted warp of one curve on `ts`
/// (values in [0, 1]); `y_out` and `h_out` each receive `len` values.
///
/// # Safety
/// `fit` must be a live fit handle; `ts`, `y_out`, `h_out` must hold `len`
/// readable/writable values respectively.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_predict(
    fit: *const WarpregFit,
    curve_index: usize,
    ts: *const f64,
    len: usize,
    y_out: *mut f64,
    h_out: *mut f64,
) -> WarpregStatus {
    if fit.is_null() || ts.is_null() || y_out.is_null() || h_out.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    let result = &(*fit).inner;
    let id = match result.curves.get(curve_index) {
        Some(cf) => cf.id.clone(),
        None => {
            set_error(&format!("curve index {curve_index} out of range"));
            return WarpregStatus::NotFound;
        }
    };
    let grid = std::slice::from_raw_parts(ts, len);
    guarded(|| match predict(result, &id, grid) {
        Ok((y_hat, h_hat)) => {
            std::ptr::copy_nonoverlapping(y_hat.as_ptr(), y_out, len);
            std::ptr::copy_nonoverlapping(h_hat.as_ptr(), h_out, len);
            WarpregStatus::Ok
        }
        Err(e) => fail(&e),
    })
}

/// K-means on the fit's conditional-mean warp increments; writes one label
/// per curve into `labels`.
///
/// # Safety
/// `fit` must be a live fit handle; `labels` must hold `len` writable
/// entries with `len` at least the number of curves.
#[no_mangle]
pub unsafe extern "C" fn warpreg_cluster_warps(
    fit: *const WarpregFit,
    num_clusters: usize,
    seed: u64,
    restarts: usize,
    labels: *mut usize,
    len: usize,
) -> WarpregStatus {
    if fit.is_null() || labels.is_null() {
        set_error("null pointer argument");
        return WarpregStatus::NullPointer;
    }
    let curves = &(*fit).inner.curves;
    if len < curves.len() {
        set_error(&format!(
            "label buffer holds {len} entries, need {}",
            curves.len()
        ));
        return WarpregStatus::BufferTooSmall;
    }
    guarded(|| {
        let coeffs: Vec<Vec<f64>> = curves.iter().map(|cf| cf.warp_increments.clone()).collect();
        match kmeans_warps(&coeffs, num_clusters, seed, restarts) {
            Ok(result) => {
                std::ptr::copy_nonoverlapping(result.labels.as_ptr(), labels, result.labels.len());
                WarpregStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Destroy a fit handle. Null is ignored.
///
/// # Safety
/// `fit` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn warpreg_fit_free(fit: *mut WarpregFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
