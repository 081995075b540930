//! C ABI for the phcert certification pipeline.
//!
//! All functions are `extern "C"`, operate on opaque handles, and report
//! failures through integer status codes. The message for the most recent
//! failure on the current thread is available via
//! [`phcert_last_error_message`]. Handles must be released with the matching
//! `*_free` function; passing null is always safe and a no-op for frees.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use phcert::certify::{make_certificate, Certificate, PhiChoice, Region};
use phcert::config::builtin_model;
use phcert::model::{MechanicalSystem, State};
use phcert::pidpbc::{build_closed_loop, GainSet};
use phcert::plvcc::to_canonical;
use phcert::sim::simulate;
use phcert::{Error, VecF};

/// Status codes returned by every fallible function.
pub const PHCERT_OK: i32 = 0;
/// A pointer argument was null or an array length was inconsistent.
pub const PHCERT_ERR_ARGUMENT: i32 = 1;
/// The problem is well-formed but no certificate exists on the region.
pub const PHCERT_ERR_INFEASIBLE: i32 = 2;
/// A numerical failure (singular matrix, integration blow-up, ...).
pub const PHCERT_ERR_NUMERIC: i32 = 3;
/// An internal panic was caught at the boundary.
pub const PHCERT_ERR_INTERNAL: i32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.to_string());
}

fn code_for(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) | Error::NotConvex(_) | Error::NoFeasibleGains => {
            PHCERT_ERR_INFEASIBLE
        }
        Error::Shape(_) | Error::Config(_) | Error::InvalidGains(_) => PHCERT_ERR_ARGUMENT,
        _ => PHCERT_ERR_NUMERIC,
    }
}

fn fail(e: &Error) -> i32 {
    set_error(&e.to_string());
    code_for(e)
}

/// Copies the most recent error message on this thread into `buf` as a
/// NUL-terminated string, truncating to `len` bytes. Returns the full
/// message length (excluding the NUL). Safe to call with a null buffer to
/// query the required size.
#[no_mangle]
pub extern "C" fn phcert_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let bytes = msg.as_bytes();
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast(), n);
                *buf.add(n) = 0;
            }
        }
        msg.len()
    })
}

/// Opaque mechanical-system handle.
pub struct PhcertSystem {
    sys: MechanicalSystem,
}

/// Opaque gain-set handle.
pub struct PhcertGains {
    gains: GainSet,
}

/// Opaque certificate handle.
pub struct PhcertCertificate {
    cert: Certificate,
}

/// Builds a builtin model (`pera`, `pendulum`, or `msd1`). Returns null on
/// error; the message is available via [`phcert_last_error_message`].
#[no_mangle]
pub extern "C" fn phcert_system_new_builtin(name: *const c_char) -> *mut PhcertSystem {
    if name.is_null() {
        set_error("model name is null");
        return std::ptr::null_mut();
    }
    let name = match unsafe { CStr::from_ptr(name) }.to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("model name is not valid UTF-8");
            return std::ptr::null_mut();
        }
    };
    match builtin_model(name) {
        Some(Ok(sys)) => Box::into_raw(Box::new(PhcertSystem { sys })),
        Some(Err(e)) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
        None => {
            set_error(&format!("unknown builtin model '{name}'"));
            std::ptr::null_mut()
        }
    }
}

/// Degrees of freedom of the model, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn phcert_system_dof(sys: *const PhcertSystem) -> usize {
    if sys.is_null() {
        return 0;
    }
    unsafe { &*sys }.sys.n()
}

#[no_mangle]
pub extern "C" fn phcert_system_free(sys: *mut PhcertSystem) {
    if !sys.is_null() {
        drop(unsafe { Box::from_raw(sys) });
    }
}

/// Builds a diagonal PID gain set. `kp`, `ki`, `kd` carry `m` entries and
/// `q_star` carries `n` entries. Returns null on error.
#[no_mangle]
pub extern "C" fn phcert_gains_new_diagonal(
    m: usize,
    kp: *const f64,
    ki: *const f64,
    kd: *const f64,
    n: usize,
    q_star: *const f64,
) -> *mut PhcertGains {
    if m == 0 || n == 0 || kp.is_null() || ki.is_null() || kd.is_null() || q_star.is_null() {
        set_error("gain arrays must be non-null with m >= 1, n >= 1");
        return std::ptr::null_mut();
    }
    let (kp, ki, kd, qs) = unsafe {
        (
            slice::from_raw_parts(kp, m),
            slice::from_raw_parts(ki, m),
            slice::from_raw_parts(kd, m),
            slice::from_raw_parts(q_star, n),
        )
    };
    match GainSet::diagonal(kp, ki, kd, qs) {
        Ok(gains) => Box::into_raw(Box::new(PhcertGains { gains })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

#[no_mangle]
pub extern "C" fn phcert_gains_free(gains: *mut PhcertGains) {
    if !gains.is_null() {
        drop(unsafe { Box::from_raw(gains) });
    }
}

/// Closes the loop, transforms to canonical coordinates, and searches for a
/// decay-rate certificate on the box |q| <= `q_radius`, |p| <= `p_radius`
/// (uniform per axis) with `grid_points` samples per axis (0 for the
/// default). On success writes a new handle through `out`.
#[no_mangle]
pub extern "C" fn phcert_certify(
    sys: *const PhcertSystem,
    gains: *const PhcertGains,
    q_radius: f64,
    p_radius: f64,
    grid_points: usize,
    out: *mut *mut PhcertCertificate,
) -> i32 {
    if sys.is_null() || gains.is_null() || out.is_null() {
        set_error("null handle passed to phcert_certify");
        return PHCERT_ERR_ARGUMENT;
    }
    let (sys, gains) = unsafe { (&(*sys).sys, &(*gains).gains) };
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<Certificate, Error> {
        let cl = build_closed_loop(sys, gains)?;
        let csys = to_canonical(&cl);
        let mut region = Region::uniform(sys.n(), q_radius, p_radius)?;
        if grid_points > 0 {
            region = region.with_grid(grid_points);
        }
        make_certificate(&csys, &region, PhiChoice::ATranspose)
    }));
    match result {
        Ok(Ok(cert)) => {
            unsafe { *out = Box::into_raw(Box::new(PhcertCertificate { cert })) };
            PHCERT_OK
        }
        Ok(Err(e)) => fail(&e),
        Err(_) => {
            set_error("internal panic in phcert_certify");
            PHCERT_ERR_INTERNAL
        }
    }
}

macro_rules! cert_getter {
    ($name:ident, $field:ident) => {
        /// Certificate field accessor; NaN for a null handle.
        #[no_mangle]
        pub extern "C" fn $name(cert: *const PhcertCertificate) -> f64 {
            if cert.is_null() {
                return f64::NAN;
            }
            unsafe { &*cert }.cert.$field
        }
    };
}

cert_getter!(phcert_certificate_epsilon, epsilon);
cert_getter!(phcert_certificate_k1, k1);
cert_getter!(phcert_certificate_k2, k2);
cert_getter!(phcert_certificate_mu, mu);
cert_getter!(phcert_certificate_rate_paper, rate_paper);
cert_getter!(phcert_certificate_rate_sound, rate_sound);

#[no_mangle]
pub extern "C" fn phcert_certificate_free(cert: *mut PhcertCertificate) {
    if !cert.is_null() {
        drop(unsafe { Box::from_raw(cert) });
    }
}

/// Integrates the closed loop from `(q0, p0)` (each `n` entries) with
/// fixed-step RK4 and writes the final configuration error `|q(T) - q*|`
/// through `out_final_error`.
#[no_mangle]
pub extern "C" fn phcert_simulate_final_error(
    sys: *const PhcertSystem,
    gains: *const PhcertGains,
    q0: *const f64,
    p0: *const f64,
    horizon: f64,
    step: f64,
    out_final_error: *mut f64,
) -> i32 {
    if sys.is_null() || gains.is_null() || q0.is_null() || p0.is_null() || out_final_error.is_null()
    {
        set_error("null pointer passed to phcert_simulate_final_error");
        return PHCERT_ERR_ARGUMENT;
    }
    let (sys, gains) = unsafe { (&(*sys).sys, &(*gains).gains) };
    let n = sys.n();
    let (q0, p0) = unsafe { (slice::from_raw_parts(q0, n), slice::from_raw_parts(p0, n)) };
    let result = catch_unwind(AssertUnwindSafe(|| -> Result<f64, Error> {
        let cl = build_closed_loop(sys, gains)?;
        let s0 = State::new(VecF::from_row_slice(q0), VecF::from_row_slice(p0))?;
        let traj = simulate(&cl, &s0, horizon, step)?;
        Ok((&traj.final_state().q - &gains.q_star).norm())
    }));
    match result {
        Ok(Ok(err)) => {
            unsafe { *out_final_error = err };
            PHCERT_OK
        }
        Ok(Err(e)) => fail(&e),
        Err(_) => {
            set_error("internal panic in phcert_simulate_final_error");
            PHCERT_ERR_INTERNAL
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn msd1() -> *mut PhcertSystem {
        let name = CString::new("msd1").unwrap();
        let sys = phcert_system_new_builtin(name.as_ptr());
        assert!(!sys.is_null());
        sys
    }

    fn unit_gains(n: usize) -> *mut PhcertGains {
        let kp = vec![1.0; n];
        let ki = vec![2.0; n];
        let kd = vec![0.0; n];
        let qs = vec![0.0; n];
        let g = phcert_gains_new_diagonal(n, kp.as_ptr(), ki.as_ptr(), kd.as_ptr(), n, qs.as_ptr());
        assert!(!g.is_null());
        g
    }

    #[test]
    fn certify_msd1_through_ffi() {
        let sys = msd1();
        assert_eq!(phcert_system_dof(sys), 1);
        let gains = unit_gains(1);
        let mut cert: *mut PhcertCertificate = std::ptr::null_mut();
        let code = phcert_certify(sys, gains, 0.3, 0.5, 0, &mut cert);
        assert_eq!(code, PHCERT_OK);
        assert!(!cert.is_null());
        let eps = phcert_certificate_epsilon(cert);
        assert!((eps - 1.0 / 72.0).abs() < 1e-9, "eps = {eps}");
        assert!(phcert_certificate_rate_sound(cert) > 0.0);
        assert!(phcert_certificate_k2(cert) > phcert_certificate_k1(cert));
        phcert_certificate_free(cert);
        phcert_gains_free(gains);
        phcert_system_free(sys);
    }

    #[test]
    fn infeasible_reports_code_and_message() {
        let name = CString::new("pendulum").unwrap();
        let sys = phcert_system_new_builtin(name.as_ptr());
        let (kp, ki, kd, qs) = ([1.0], [0.1], [0.0], [0.0]);
        let gains =
            phcert_gains_new_diagonal(1, kp.as_ptr(), ki.as_ptr(), kd.as_ptr(), 1, qs.as_ptr());
        let mut cert: *mut PhcertCertificate = std::ptr::null_mut();
        // radius 3.2 sweeps past the inverted pose where convexity fails
        let code = phcert_certify(sys, gains, 3.2, 0.5, 0, &mut cert);
        assert_eq!(code, PHCERT_ERR_INFEASIBLE);
        assert!(cert.is_null());
        let mut buf = [0i8; 256];
        let len = phcert_last_error_message(buf.as_mut_ptr(), buf.len());
        assert!(len > 0);
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert!(!msg.is_empty());
        phcert_gains_free(gains);
        phcert_system_free(sys);
    }

    #[test]
    fn null_arguments_are_safe() {
        assert!(phcert_system_new_builtin(std::ptr::null()).is_null());
        assert_eq!(phcert_system_dof(std::ptr::null()), 0);
        phcert_system_free(std::ptr::null_mut());
        phcert_gains_free(std::ptr::null_mut());
        phcert_certificate_free(std::ptr::null_mut());
        assert!(phcert_certificate_epsilon(std::ptr::null()).is_nan());
        let mut cert: *mut PhcertCertificate = std::ptr::null_mut();
        assert_eq!(
            phcert_certify(std::ptr::null(), std::ptr::null(), 0.3, 0.5, 0, &mut cert),
            PHCERT_ERR_ARGUMENT
        );
        let unknown = CString::new("nope").unwrap();
        assert!(phcert_system_new_builtin(unknown.as_ptr()).is_null());
        let n = phcert_last_error_message(std::ptr::null_mut(), 0);
        assert!(n > 0);
    }

    #[test]
    fn simulate_through_ffi() {
        let sys = msd1();
        let gains = unit_gains(1);
        let (q0, p0) = ([1.0], [0.0]);
        let mut err = f64::NAN;
        let code = phcert_simulate_final_error(
            sys,
            gains,
            q0.as_ptr(),
            p0.as_ptr(),
            14.0,
            1e-3,
            &mut err,
        );
        assert_eq!(code, PHCERT_OK);
        assert!(err < 1e-3, "final error = {err}");
        phcert_gains_free(gains);
        phcert_system_free(sys);
    }
}
