//! C interface to `opfree`.
//!
//! Matrices cross the boundary as row-major arrays of interleaved `(re, im)`
//! doubles, so a `d x d` matrix takes `2 d^2` values. Every function returns an
//! [`OpfreeStatus`]; on failure the message is available from
//! [`opfree_last_error`] until the next failing call on the same thread.
//! Handles and strings returned here must be released with the matching
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use opfree::config::{self, HinchinConfig};
use opfree::dist::{convolution_power, free_convolve, moments_from_cumulants, point_mass, semicircular};
use opfree::dist::{CumulantSequence, Distribution, DistributionJson};
use opfree::linalg::{c64, Mat, ProbePoint};
use opfree::steinitz::{rearrange_zero_sum, subset_select, SteinitzInstance};
use opfree::transforms::{cauchy_series, voiculescu_series};
use opfree::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpfreeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    MissingOrder = 4,
    Serialization = 5,
    Singular = 6,
    DomainViolation = 7,
    NoConvergence = 8,
    InfeasibleInput = 9,
    InvalidUtf8 = 10,
    Panic = 11,
}

/// A distribution held by its cumulant sequence.
pub struct OpfreeDistribution {
    inner: CumulantSequence,
}

/// A finite family of real vectors.
pub struct OpfreeVectors {
    inner: SteinitzInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(OpfreeStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DimensionMismatch(_) => OpfreeStatus::DimensionMismatch,
            Error::Singular { .. } => OpfreeStatus::Singular,
            Error::DomainViolation(_) => OpfreeStatus::DomainViolation,
            Error::NoConvergence { .. } => OpfreeStatus::NoConvergence,
            Error::InfeasibleInput(_) => OpfreeStatus::InfeasibleInput,
            Error::InvalidArgument(_) => OpfreeStatus::InvalidArgument,
            Error::MissingOrder(_) => OpfreeStatus::MissingOrder,
            Error::Serialization(_) => OpfreeStatus::Serialization,
        };
        Fail(code, e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(OpfreeStatus::Serialization, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(OpfreeStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> OpfreeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OpfreeStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            OpfreeStatus::Panic
        }
    }
}

unsafe fn read_matrix(data: *const f64, n: usize) -> Result<Mat, Fail> {
    if data.is_null() {
        return Err(null("matrix data"));
    }
    let s = std::slice::from_raw_parts(data, 2 * n * n);
    Ok(Mat::from_fn(n, n, |r, c| {
        let k = 2 * (r * n + c);
        c64(s[k], s[k + 1])
    }))
}

unsafe fn write_matrix(m: &Mat, out: *mut f64) {
    let n = m.nrows();
    for r in 0..n {
        for c in 0..n {
            let z = m[(r, c)];
            *out.add(2 * (r * n + c)) = z.re;
            *out.add(2 * (r * n + c) + 1) = z.im;
        }
    }
}

unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| Fail(OpfreeStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Fail> {
    h.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(s).map_err(|e| Fail(OpfreeStatus::Serialization, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

fn wrap(inner: CumulantSequence) -> OpfreeDistribution {
    OpfreeDistribution { inner }
}

/// Message of the last failure on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn opfree_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn opfree_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Semicircular law with covariance `eta`, a `d^2 x d^2` matrix whose column
/// `a d + b` is `eta(E_ab)` flattened row-major.
///
/// # Safety
/// `eta` must point to `2 d^4` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opfree_semicircular(
    dim: usize,
    eta: *const f64,
    order: usize,
    out: *mut *mut OpfreeDistribution,
) -> OpfreeStatus {
    guard(|| {
        let eta = read_matrix(eta, dim * dim)?;
        put(out, wrap(semicircular(&eta, order)?))
    })
}

/// `delta_b` for a self-adjoint `d x d` matrix `b`.
///
/// # Safety
/// `b` must point to `2 d^2` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opfree_point_mass(
    dim: usize,
    b: *const f64,
    order: usize,
    out: *mut *mut OpfreeDistribution,
) -> OpfreeStatus {
    guard(|| {
        let b = read_matrix(b, dim)?;
        put(out, wrap(point_mass(&b, order)?))
    })
}

/// Parses a distribution document (moments or cumulants).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opfree_distribution_from_json(
    json: *const c_char,
    out: *mut *mut OpfreeDistribution,
) -> OpfreeStatus {
    guard(|| {
        let doc: DistributionJson = serde_json::from_str(read_str(json, "json")?)?;
        let k = Distribution::try_from(&doc)?.to_cumulants()?;
        put(out, wrap(k))
    })
}

/// Serializes the cumulants (`moments == false`) or moments of `h`.
///
/// # Safety
/// `h` must be a live handle; release `*out` with [`opfree_string_free`].
#[no_mangle]
pub unsafe extern "C" fn opfree_distribution_to_json(
    h: *const OpfreeDistribution,
    moments: bool,
    out: *mut *mut c_char,
) -> OpfreeStatus {
    guard(|| {
        let k = &handle(h, "distribution")?.inner;
        let doc = if moments {
            DistributionJson::from(&moments_from_cumulants(k)?)
        } else {
            DistributionJson::from(k)
        };
        put_string(out, serde_json::to_string(&doc)?)
    })
}

/// # Safety
/// `h` must be a live handle; all three outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn opfree_distribution_info(
    h: *const OpfreeDistribution,
    dim: *mut usize,
    order: *mut usize,
    bound: *mut f64,
) -> OpfreeStatus {
    guard(|| {
        let k = &handle(h, "distribution")?.inner;
        if !dim.is_null() {
            *dim = k.dim();
        }
        if !order.is_null() {
            *order = k.order();
        }
        if !bound.is_null() {
            *bound = k.bound();
        }
        Ok(())
    })
}

/// # Safety
/// `h` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn opfree_distribution_free(h: *mut OpfreeDistribution) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// `a boxplus b`.
///
/// # Safety
/// `a`, `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opfree_free_convolve(
    a: *const OpfreeDistribution,
    b: *const OpfreeDistribution,
    out: *mut *mut OpfreeDistribution,
) -> OpfreeStatus {
    guard(|| {
        let k = free_convolve(&handle(a, "left")?.inner, &handle(b, "right")?.inner)?;
        put(out, wrap(k))
    })
}

/// `h^{boxplus t}`. `positive` (nullable) reports whether positivity is certified.
///
/// # Safety
/// `h` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opfree_convolution_power(
    h: *const OpfreeDistribution,
    t: f64,
    out: *mut *mut OpfreeDistribution,
    positive: *mut bool,
) -> OpfreeStatus {
    guard(|| {
        let p = convolution_power(&handle(h, "distribution")?.inner, t)?;
        if !positive.is_null() {
            *positive = p.positivity_certified;
        }
        put(out, wrap(p.cumulants))
    })
}

type Series = fn(&CumulantSequence, &ProbePoint, usize) -> opfree::Result<opfree::transforms::SeriesValue>;

unsafe fn series_at(
    h: *const OpfreeDistribution,
    level: usize,
    b: *const f64,
    tail_order: usize,
    value: *mut f64,
    tail: *mut f64,
    f: Series,
) -> Result<(), Fail> {
    let k = &handle(h, "distribution")?.inner;
    if value.is_null() {
        return Err(null("value"));
    }
    let b = ProbePoint::new(read_matrix(b, level * k.dim())?, level)?;
    let s = f(k, &b, tail_order)?;
    write_matrix(&s.value, value);
    if !tail.is_null() {
        *tail = s.tail_bound;
    }
    Ok(())
}

/// Truncated Cauchy transform `E[(b - X)^{-1}]` at a level-`level` probe `b`
/// (a `k d x k d` matrix with positive imaginary part), with its tail bound.
///
/// # Safety
/// `b` and `value` must hold `2 (level d)^2` doubles; `tail` may be null.
#[no_mangle]
pub unsafe extern "C" fn opfree_cauchy(
    h: *const OpfreeDistribution,
    level: usize,
    b: *const f64,
    tail_order: usize,
    value: *mut f64,
    tail: *mut f64,
) -> OpfreeStatus {
    guard(|| {
        series_at(h, level, b, tail_order, value, tail, |k, b, n| {
            cauchy_series(&moments_from_cumulants(k)?, b, n)
        })
    })
}

/// Voiculescu transform `sum_n kappa_n(b^{-1}, ..., b^{-1})` with its tail bound.
///
/// # Safety
/// As for [`opfree_cauchy`].
#[no_mangle]
pub unsafe extern "C" fn opfree_voiculescu(
    h: *const OpfreeDistribution,
    level: usize,
    b: *const f64,
    tail_order: usize,
    value: *mut f64,
    tail: *mut f64,
) -> OpfreeStatus {
    guard(|| series_at(h, level, b, tail_order, value, tail, voiculescu_series))
}

/// `len` vectors of length `dim`, stored contiguously.
///
/// # Safety
/// `data` must point to `len * dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn opfree_vectors_new(
    dim: usize,
    len: usize,
    data: *const f64,
    out: *mut *mut OpfreeVectors,
) -> OpfreeStatus {
    guard(|| {
        if data.is_null() && len * dim > 0 {
            return Err(null("data"));
        }
        let flat = if len * dim == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(data, len * dim)
        };
        let vs = flat.chunks(dim.max(1)).map(<[f64]>::to_vec).collect();
        let inner = SteinitzInstance::with_dim(dim, vs)?;
        put(out, OpfreeVectors { inner })
    })
}

/// # Safety
/// `h` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn opfree_vectors_free(h: *mut OpfreeVectors) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Reorders a zero-sum family with bounded prefix sums; writes the result as JSON.
///
/// # Safety
/// `h` must be a live handle; release `*out` with [`opfree_string_free`].
#[no_mangle]
pub unsafe extern "C" fn opfree_steinitz_rearrange(h: *const OpfreeVectors, out: *mut *mut c_char) -> OpfreeStatus {
    guard(|| {
        let r = rearrange_zero_sum(&handle(h, "vectors")?.inner)?;
        put_string(out, serde_json::to_string(&r)?)
    })
}

/// Selects a subset whose sum approximates `t` times the total; writes the result as JSON.
///
/// # Safety
/// As for [`opfree_steinitz_rearrange`].
#[no_mangle]
pub unsafe extern "C" fn opfree_steinitz_select(
    h: *const OpfreeVectors,
    t: f64,
    out: *mut *mut c_char,
) -> OpfreeStatus {
    guard(|| {
        let r = subset_select(&handle(h, "vectors")?.inner, t)?;
        put_string(out, serde_json::to_string(&r)?)
    })
}

/// Runs a divisibility experiment from a TOML (or JSON, when `json`) config.
/// Relative paths in the config resolve against `base_dir`, which may be null.
/// The output holds `report` and `infinitesimality`.
///
/// # Safety
/// Strings must be NUL-terminated; release `*out` with [`opfree_string_free`].
#[no_mangle]
pub unsafe extern "C" fn opfree_hinchin_run(
    config_text: *const c_char,
    json: bool,
    base_dir: *const c_char,
    out: *mut *mut c_char,
) -> OpfreeStatus {
    guard(|| {
        let cfg: HinchinConfig = config::parse(read_str(config_text, "config")?, json)?;
        let base = if base_dir.is_null() { "" } else { read_str(base_dir, "base_dir")? };
        let run = cfg.run(Path::new(base))?;
        put_string(out, serde_json::to_string(&run)?)
    })
}
