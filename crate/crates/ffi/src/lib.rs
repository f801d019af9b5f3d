//! C ABI over the gradphi library.
//!
//! Every fallible function returns a [`GpStatus`] and writes its result through
//! an out-pointer. On failure the message is kept per thread and read back
//! with [`gradphi_last_error_message`]. Handles are opaque and must be
//! released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use gradphi::free_energy::{nu_estimate, nustar_estimate, TiConfig};
use gradphi::gff::{extrapolate_limit, GaussianExact};
use gradphi::potentials::{validate, Potential};
use gradphi::sampler::ChainConfig;
use gradphi::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GpStatus {
    Ok = 0,
    InvalidArgument = 1,
    NullPointer = 2,
    Numerical = 3,
    SizeCap = 4,
    Panic = 5,
}

/// Parsed interaction potential.
pub struct GpPotential(Potential);

/// Exact Gaussian oracle on one cube.
pub struct GpGaussian(GaussianExact);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> GpStatus {
    match e {
        Error::Factorization { .. } | Error::NoConvergence { .. } | Error::Diagnostics(_) | Error::TraceTooShort { .. } => {
            GpStatus::Numerical
        }
        Error::SizeCap(_) | Error::Budget(_) => GpStatus::SizeCap,
        _ => GpStatus::InvalidArgument,
    }
}

struct Null(&'static str);

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<Null> for Failure {
    fn from(n: Null) -> Self {
        Failure::Null(n.0)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {}", what));
            GpStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {}", msg));
            GpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Null> {
    p.as_ref().ok_or(Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Null> {
    p.as_mut().ok_or(Null(what))
}

unsafe fn vector<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Null> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn gradphi_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gradphi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Parses `quadratic:<beta>` or `logcosh:<a>` and checks ellipticity.
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out_handle` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gradphi_potential_parse(spec: *const c_char, out_handle: *mut *mut GpPotential) -> GpStatus {
    guard(|| {
        let s = deref(spec, "spec")?;
        let o = out(out_handle, "out")?;
        let text = CStr::from_ptr(s).to_str().map_err(|_| Error::InvalidArgument("spec is not UTF-8".into()))?;
        let v: Potential = text.parse()?;
        validate(&v)?;
        *o = Box::into_raw(Box::new(GpPotential(v)));
        Ok(())
    })
}

/// # Safety
/// `v` must come from [`gradphi_potential_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gradphi_potential_free(v: *mut GpPotential) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// V(x).
///
/// # Safety
/// `v` must be a live potential handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gradphi_potential_eval(v: *const GpPotential, x: f64, value: *mut f64) -> GpStatus {
    guard(|| {
        let v = deref(v, "potential")?;
        *out(value, "value")? = v.0.eval(x);
        Ok(())
    })
}

/// V'(x).
///
/// # Safety
/// `v` must be a live potential handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gradphi_potential_deriv(v: *const GpPotential, x: f64, value: *mut f64) -> GpStatus {
    guard(|| {
        let v = deref(v, "potential")?;
        *out(value, "value")? = v.0.deriv(x);
        Ok(())
    })
}

/// V''(x).
///
/// # Safety
/// `v` must be a live potential handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gradphi_potential_second_deriv(v: *const GpPotential, x: f64, value: *mut f64) -> GpStatus {
    guard(|| {
        let v = deref(v, "potential")?;
        *out(value, "value")? = v.0.second_deriv(x);
        Ok(())
    })
}

/// Ellipticity constant λ with λ ≤ V'' ≤ 1/λ.
///
/// # Safety
/// `v` must be a live potential handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gradphi_potential_lambda(v: *const GpPotential, value: *mut f64) -> GpStatus {
    guard(|| {
        let v = deref(v, "potential")?;
        *out(value, "value")? = v.0.lambda();
        Ok(())
    })
}

/// Exact Gaussian oracle for V(x) = βx² on the cube of side 3^n in Z^d.
///
/// # Safety
/// `out_handle` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gradphi_gff_new(d: usize, n: u32, beta: f64, out_handle: *mut *mut GpGaussian) -> GpStatus {
    guard(|| {
        let o = out(out_handle, "out")?;
        *o = Box::into_raw(Box::new(GpGaussian(GaussianExact::new(d, n, beta)?)));
        Ok(())
    })
}

/// # Safety
/// `g` must come from [`gradphi_gff_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gradphi_gff_free(g: *mut GpGaussian) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// ν at tilt `p[0..len]`.
///
/// # Safety
/// `g` must be live, `p` must hold `len` doubles and `value` be valid.
#[no_mangle]
pub unsafe extern "C" fn gradphi_gff_nu(g: *const GpGaussian, p: *const f64, len: usize, value: *mut f64) -> GpStatus {
    guard(|| {
        let g = deref(g, "gaussian")?;
        let p = vector(p, len, "p")?;
        *out(value, "value")? = g.0.nu(p)?;
        Ok(())
    })
}

/// ν* at tilt `q[0..len]`.
///
/// # Safety
/// `g` must be live, `q` must hold `len` doubles and `value` be valid.
#[no_mangle]
pub unsafe extern "C" fn gradphi_gff_nustar(g: *const GpGaussian, q: *const f64, len: usize, value: *mut f64) -> GpStatus {
    guard(|| {
        let g = deref(g, "gaussian")?;
        let q = vector(q, len, "q")?;
        *out(value, "value")? = g.0.nustar(q)?;
        Ok(())
    })
}

/// Gradient of ν* at `q`, written to `grad[0..len]`.
///
/// # Safety
/// `g` must be live and `q`, `grad` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gradphi_gff_grad_nustar(g: *const GpGaussian, q: *const f64, len: usize, grad: *mut f64) -> GpStatus {
    guard(|| {
        let g = deref(g, "gaussian")?;
        let q = vector(q, len, "q")?;
        if grad.is_null() {
            return Err(Null("grad").into());
        }
        let v = g.0.grad_nustar(q)?;
        slice::from_raw_parts_mut(grad, len).copy_from_slice(&v);
        Ok(())
    })
}

/// Trace of the Dirichlet covariance.
///
/// # Safety
/// `g` must be live and `value` valid.
#[no_mangle]
pub unsafe extern "C" fn gradphi_gff_l2_trace(g: *const GpGaussian, value: *mut f64) -> GpStatus {
    guard(|| {
        let g = deref(g, "gaussian")?;
        *out(value, "value")? = g.0.l2_trace()?;
        Ok(())
    })
}

/// Limit and rate of value_n ≈ limit + A·3^{−rate·n} from `len` levels.
///
/// # Safety
/// `levels` and `values` must hold `len` entries; `limit` and `rate` valid.
#[no_mangle]
pub unsafe extern "C" fn gradphi_extrapolate_limit(
    levels: *const u32,
    values: *const f64,
    len: usize,
    limit: *mut f64,
    rate: *mut f64,
) -> GpStatus {
    guard(|| {
        if levels.is_null() && len > 0 {
            return Err(Null("levels").into());
        }
        let vals = vector(values, len, "values")?;
        let lv: &[u32] = if len == 0 { &[] } else { slice::from_raw_parts(levels, len) };
        let seq: Vec<(u32, f64)> = lv.iter().copied().zip(vals.iter().copied()).collect();
        let ext = extrapolate_limit(&seq)?;
        *out(limit, "limit")? = ext.limit;
        *out(rate, "rate")? = ext.rate;
        Ok(())
    })
}

/// Monte Carlo ν(Q_n, p) (`dual == 0`) or ν*(Q_n, q) (`dual != 0`) with its
/// standard error.
///
/// # Safety
/// `v` must be live, `tilt` must hold `d` doubles, `value` and `stderr` valid.
#[no_mangle]
pub unsafe extern "C" fn gradphi_surface_tension_estimate(
    v: *const GpPotential,
    d: usize,
    n: u32,
    tilt: *const f64,
    dual: i32,
    steps: usize,
    burn_in: usize,
    seed: u64,
    value: *mut f64,
    stderr: *mut f64,
) -> GpStatus {
    guard(|| {
        let v = deref(v, "potential")?;
        let t = vector(tilt, d, "tilt")?;
        let cfg = TiConfig { chain: ChainConfig { steps, burn_in, seed, ..ChainConfig::default() }, ..TiConfig::default() };
        let e = if dual == 0 { nu_estimate(d, n, t, &v.0, &cfg)? } else { nustar_estimate(d, n, t, &v.0, &cfg)? };
        *out(value, "value")? = e.value;
        *out(stderr, "stderr")? = e.stderr;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_state_is_cleared_on_success() {
        let mut h = std::ptr::null_mut();
        let s = unsafe { gradphi_potential_parse(c"cubic:1".as_ptr(), &mut h) };
        assert_eq!(s, GpStatus::InvalidArgument);
        assert!(!gradphi_last_error_message().is_null());
        let s = unsafe { gradphi_potential_parse(c"quadratic:1".as_ptr(), &mut h) };
        assert_eq!(s, GpStatus::Ok);
        assert!(gradphi_last_error_message().is_null());
        unsafe { gradphi_potential_free(h) };
    }
}
