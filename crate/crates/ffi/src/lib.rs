//! C ABI over the `mdpde` crate.
//!
//! Paths and fits are opaque heap handles released with their `_free`
//! function. Every call returns an [`MdpdeStatus`]; on failure the message is
//! available from [`mdpde_last_error_message`] on the same thread. Matrices
//! cross the boundary as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mdpde::estimator::Init;
use mdpde::inference::{wald_test, InferenceReport};
use mdpde::sim::{contaminate, simulate_path};
use mdpde::{
    fit, ContaminationSpec, DiffusionParams, DriftAffine, Error, FitResult, MdpdeConfig,
    SamplePath, SpdMatrix,
};
use nalgebra::{DMatrix, DVector};

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdpdeStatus {
    Ok = 0,
    InvalidArgument = 1,
    Numerical = 2,
    Parse = 3,
    Io = 4,
    NullPointer = 5,
    Panic = 6,
}

/// Observed or simulated sample path.
pub struct MdpdePath(SamplePath);

/// Estimation result together with the tuning parameter used.
pub struct MdpdeFit {
    result: FitResult,
    alpha: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MdpdeStatus {
    match e {
        Error::Io(_) => MdpdeStatus::Io,
        Error::Parse(_) => MdpdeStatus::Parse,
        e if e.is_numerical() => MdpdeStatus::Numerical,
        _ => MdpdeStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> MdpdeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MdpdeStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            MdpdeStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            MdpdeStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn params_from_raw(
    drift_matrix: *const f64,
    intercept: *const f64,
    sigma: *const f64,
    d: usize,
) -> Result<DiffusionParams, Failure> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()).into());
    }
    let b = DMatrix::from_row_slice(d, d, slice(drift_matrix, d * d, "drift_matrix")?);
    let c = DVector::from_column_slice(slice(intercept, d, "intercept")?);
    let s = SpdMatrix::from_row_slice(d, slice(sigma, d * d, "sigma")?)?;
    Ok(DiffusionParams::new(DriftAffine::new(b, c)?, s)?)
}

fn string_out(text: String, out: *mut *mut c_char) -> Result<(), Failure> {
    let c = CString::new(text).map_err(|e| Error::Parse(e.to_string()))?;
    unsafe { write_out(out, c.into_raw(), "out") }
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mdpde_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mdpde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Euler path of `dX = (B X + b) dt + Sigma^{1/2} dW` with `n` steps of size `h`.
///
/// # Safety
/// `drift_matrix` and `sigma` point to `d*d` doubles, `intercept` and `x0` to `d`.
#[no_mangle]
pub unsafe extern "C" fn mdpde_path_simulate(
    drift_matrix: *const f64,
    intercept: *const f64,
    sigma: *const f64,
    x0: *const f64,
    d: usize,
    n: usize,
    h: f64,
    seed: u64,
    out: *mut *mut MdpdePath,
) -> MdpdeStatus {
    guard(|| {
        let p = params_from_raw(drift_matrix, intercept, sigma, d)?;
        let x0 = slice(x0, d, "x0")?;
        let path = simulate_path(&p.drift, p.sigma.as_sym(), x0, n, h, seed)?;
        write_out(out, Box::into_raw(Box::new(MdpdePath(path))), "out")
    })
}

/// Path from `rows` observations of dimension `d`, row-major, spaced `h` apart.
///
/// # Safety
/// `points` points to `rows*d` doubles.
#[no_mangle]
pub unsafe extern "C" fn mdpde_path_from_data(
    points: *const f64,
    rows: usize,
    d: usize,
    h: f64,
    out: *mut *mut MdpdePath,
) -> MdpdeStatus {
    guard(|| {
        let data = slice(points, rows * d, "points")?;
        let path = SamplePath::new(h, DMatrix::from_row_slice(rows, d, data))?;
        write_out(out, Box::into_raw(Box::new(MdpdePath(path))), "out")
    })
}

/// Reads a CSV with header `t,x1,..,xd`.
///
/// # Safety
/// `file` is a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn mdpde_path_read_csv(
    file: *const c_char,
    out: *mut *mut MdpdePath,
) -> MdpdeStatus {
    guard(|| {
        if file.is_null() {
            return Err(Failure::Null("file"));
        }
        let name = CStr::from_ptr(file)
            .to_str()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let path = SamplePath::read_csv(File::open(name).map_err(Error::from)?)?;
        write_out(out, Box::into_raw(Box::new(MdpdePath(path))), "out")
    })
}

/// New path with `round(eps*(n+1))` observations shifted by `kappa` times a standard normal vector.
///
/// # Safety
/// `path` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpde_path_contaminate(
    path: *const MdpdePath,
    eps: f64,
    kappa: f64,
    seed: u64,
    out: *mut *mut MdpdePath,
) -> MdpdeStatus {
    guard(|| {
        let p = handle(path, "path")?;
        let spec = ContaminationSpec::new(eps, kappa, seed)?;
        write_out(
            out,
            Box::into_raw(Box::new(MdpdePath(contaminate(&p.0, &spec)))),
            "out",
        )
    })
}

/// Number of increments `n` (the path holds `n + 1` rows); 0 for null.
///
/// # Safety
/// `path` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpde_path_len(path: *const MdpdePath) -> usize {
    path.as_ref().map_or(0, |p| p.0.n())
}

/// State dimension; 0 for null.
///
/// # Safety
/// `path` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpde_path_dim(path: *const MdpdePath) -> usize {
    path.as_ref().map_or(0, |p| p.0.dim())
}

/// Copies the `(n+1) x d` observations, row-major.
///
/// # Safety
/// `out` has room for `(n+1)*d` doubles.
#[no_mangle]
pub unsafe extern "C" fn mdpde_path_points(path: *const MdpdePath, out: *mut f64) -> MdpdeStatus {
    guard(|| {
        let p = handle(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let data = p.0.to_row_major();
        ptr::copy_nonoverlapping(data.as_ptr(), out, data.len());
        Ok(())
    })
}

/// # Safety
/// `path` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mdpde_path_free(path: *mut MdpdePath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Minimizes the density power divergence contrast at `alpha` from the
/// least-squares start. `max_iters == 0` and `grad_tol <= 0` select defaults.
///
/// # Safety
/// `path` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpde_fit(
    path: *const MdpdePath,
    alpha: f64,
    max_iters: usize,
    grad_tol: f64,
    multistart: bool,
    out: *mut *mut MdpdeFit,
) -> MdpdeStatus {
    guard(|| {
        let p = handle(path, "path")?;
        let mut cfg = MdpdeConfig::with_alpha(alpha);
        if max_iters > 0 {
            cfg.max_iters = max_iters;
        }
        if grad_tol > 0.0 {
            cfg.grad_tol = grad_tol;
        }
        cfg.multistart = multistart;
        cfg.init = Init::Ols;
        let result = fit(&p.0, &cfg)?;
        write_out(
            out,
            Box::into_raw(Box::new(MdpdeFit { result, alpha })),
            "out",
        )
    })
}

/// Dimension of the fitted model; 0 for null.
///
/// # Safety
/// `fit` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpde_fit_dim(fit: *const MdpdeFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.params.dim())
}

/// Whether the gradient tolerance was reached; false for null.
///
/// # Safety
/// `fit` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpde_fit_converged(fit: *const MdpdeFit) -> bool {
    fit.as_ref().is_some_and(|f| f.result.converged)
}

/// Copies `B` (row-major, `d*d`), `b` (`d`) and `Sigma` (row-major, `d*d`).
/// Any output pointer may be null to skip it.
///
/// # Safety
/// Non-null outputs have the stated room.
#[no_mangle]
pub unsafe extern "C" fn mdpde_fit_params(
    fit: *const MdpdeFit,
    drift_matrix: *mut f64,
    intercept: *mut f64,
    sigma: *mut f64,
) -> MdpdeStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let p = &f.result.params;
        let rows = |m: &DMatrix<f64>| m.transpose().iter().copied().collect::<Vec<f64>>();
        for (dst, src) in [
            (drift_matrix, rows(&p.drift.matrix)),
            (intercept, p.drift.intercept.iter().copied().collect()),
            (sigma, rows(p.sigma.as_matrix())),
        ] {
            if !dst.is_null() {
                ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
            }
        }
        Ok(())
    })
}

/// Objective value, iteration count and final gradient max-norm; null outputs are skipped.
///
/// # Safety
/// `fit` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpde_fit_summary(
    fit: *const MdpdeFit,
    objective: *mut f64,
    iterations: *mut usize,
    grad_norm: *mut f64,
) -> MdpdeStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        if !objective.is_null() {
            objective.write(f.result.objective);
        }
        if !iterations.is_null() {
            iterations.write(f.result.iterations);
        }
        if !grad_norm.is_null() {
            grad_norm.write(f.result.grad_norm);
        }
        Ok(())
    })
}

/// Fit result as JSON; release with [`mdpde_string_free`].
///
/// # Safety
/// `fit` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdpde_fit_to_json(
    fit: *const MdpdeFit,
    out: *mut *mut c_char,
) -> MdpdeStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let text = serde_json::to_string(&f.result).map_err(|e| Error::Parse(e.to_string()))?;
        string_out(text, out)
    })
}

/// Wald test of `beta = beta_null`, with `beta = (vec(B) column-major, b)` of
/// length `d*d + d`, using the plug-in drift covariance on `path`.
///
/// # Safety
/// Handles are live, `beta_null` has `len` doubles, outputs are valid.
#[no_mangle]
pub unsafe extern "C" fn mdpde_wald(
    fit: *const MdpdeFit,
    path: *const MdpdePath,
    beta_null: *const f64,
    len: usize,
    stat: *mut f64,
    pvalue: *mut f64,
) -> MdpdeStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let p = handle(path, "path")?;
        let null = slice(beta_null, len, "beta_null")?;
        let d = f.result.params.dim();
        let b_hat = mdpde::inference::b_matrix_hat(&p.0, &f.result.params)?;
        let cov = mdpde::inference::sigma_beta(&b_hat, f.alpha, d)?;
        let w = wald_test(&f.result.params.beta(), null, &cov, p.0.n(), p.0.h())?;
        write_out(stat, w.stat, "stat")?;
        write_out(pvalue, w.pvalue, "pvalue")
    })
}

/// Full plug-in inference report as JSON; release with [`mdpde_string_free`].
///
/// # Safety
/// Handles are live and `beta_null` has `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mdpde_inference_json(
    fit: *const MdpdeFit,
    path: *const MdpdePath,
    beta_null: *const f64,
    len: usize,
    out: *mut *mut c_char,
) -> MdpdeStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        let p = handle(path, "path")?;
        let null = slice(beta_null, len, "beta_null")?;
        let report = InferenceReport::compute(&p.0, &f.result.params, f.alpha, null)?;
        let text = serde_json::to_string(&report).map_err(|e| Error::Parse(e.to_string()))?;
        string_out(text, out)
    })
}

/// # Safety
/// `fit` is null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mdpde_fit_free(fit: *mut MdpdeFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` is null or came from this library and was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mdpde_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
