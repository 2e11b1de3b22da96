//! C interface to `mftn`.
//!
//! Objects are passed as opaque handles returned through `out` pointers
//! and released with the matching `_free`. Every fallible call returns an
//! [`MftnStatus`]; on failure `mftn_last_error` describes what went wrong on
//! the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mftn::mf_basis::{self, MfBasis};
use mftn::mf_mps::{self, Boundary, MpsTensor};
use mftn::qudit_clifford::PauliVector;
use mftn::tensors::c;
use mftn::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MftnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Numerical = 4,
    SymmetryFailed = 5,
    Io = 6,
    Panic = 7,
}

/// A basis of local operators.
pub struct MftnBasis(MfBasis);

/// A single MPS tensor with its symmetry data.
pub struct MftnMps(MpsTensor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> MftnStatus {
    match e {
        Error::NotHermitian(_) | Error::NotUnitary(_) | Error::Factorization(_) => MftnStatus::Numerical,
        Error::SymmetryFailed(_) | Error::DefectStuck { .. } => MftnStatus::SymmetryFailed,
        Error::Io(_) => MftnStatus::Io,
        _ => MftnStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MftnStatus>) -> MftnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MftnStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(msg);
            MftnStatus::Panic
        }
    }
}

fn lib<T>(r: mftn::Result<T>) -> Result<T, MftnStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), MftnStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        Err(MftnStatus::NullPointer)
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, MftnStatus> {
    non_null(p, what)?;
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        MftnStatus::InvalidUtf8
    })
}

fn invalid(msg: impl Into<String>) -> MftnStatus {
    set_error(msg);
    MftnStatus::InvalidArgument
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next `mftn_*` call on the same thread.
#[no_mangle]
pub extern "C" fn mftn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mftn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mftn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Weyl-Heisenberg basis for qudit dimension `d`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn mftn_basis_weyl_heisenberg(d: usize, out: *mut *mut MftnBasis) -> MftnStatus {
    guard(|| {
        non_null(out, "out")?;
        let b = lib(mf_basis::weyl_heisenberg_basis(d))?;
        *out = Box::into_raw(Box::new(MftnBasis(b)));
        Ok(())
    })
}

/// Number of operators in the basis.
///
/// # Safety
/// `b` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mftn_basis_len(b: *const MftnBasis) -> usize {
    b.as_ref().map_or(0, |b| b.0.elements.len())
}

/// # Safety
/// `b` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mftn_basis_free(b: *mut MftnBasis) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// The AKLT tensor with its Pauli corrections.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn mftn_mps_aklt(out: *mut *mut MftnMps) -> MftnStatus {
    guard(|| {
        non_null(out, "out")?;
        let a = lib(mf_mps::aklt_tensor())?;
        *out = Box::into_raw(Box::new(MftnMps(a)));
        Ok(())
    })
}

/// SPT tensor `Σ α_g P_g* ⊗ P_g` over the basis. `alpha_re` and `alpha_im`
/// each hold `len` entries, one per basis element.
///
/// # Safety
/// `basis` must be a live handle, the arrays must hold `len` readable
/// doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mftn_mps_spt(
    basis: *const MftnBasis,
    alpha_re: *const f64,
    alpha_im: *const f64,
    len: usize,
    out: *mut *mut MftnMps,
) -> MftnStatus {
    guard(|| {
        non_null(basis, "basis")?;
        non_null(alpha_re, "alpha_re")?;
        non_null(alpha_im, "alpha_im")?;
        non_null(out, "out")?;
        let b = &(*basis).0;
        if len != b.elements.len() {
            return Err(invalid(format!("alpha has {len} entries, basis has {}", b.elements.len())));
        }
        let re = std::slice::from_raw_parts(alpha_re, len);
        let im = std::slice::from_raw_parts(alpha_im, len);
        let alpha: Vec<_> = re.iter().zip(im).map(|(&x, &y)| c(x, y)).collect();
        let a = lib(mf_mps::spt_solution(b, &alpha))?;
        *out = Box::into_raw(Box::new(MftnMps(a)));
        Ok(())
    })
}

/// # Safety
/// `a` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mftn_mps_bond_dim(a: *const MftnMps) -> usize {
    a.as_ref().map_or(0, |a| a.0.bond_dim())
}

/// # Safety
/// `a` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mftn_mps_phys_dim(a: *const MftnMps) -> usize {
    a.as_ref().map_or(0, |a| a.0.phys_dim())
}

/// Checks the MF symmetry of the tensor. `passed` receives the verdict and
/// `residual`, if not NULL, the worst relative residual.
///
/// # Safety
/// `a` must be a live handle and `passed` writable.
#[no_mangle]
pub unsafe extern "C" fn mftn_mps_check_symmetry(
    a: *const MftnMps,
    tol: f64,
    passed: *mut bool,
    residual: *mut f64,
) -> MftnStatus {
    guard(|| {
        non_null(a, "mps")?;
        non_null(passed, "passed")?;
        let rep = lib(mf_mps::check_mf_symmetry(&(*a).0, tol))?;
        *passed = rep.passed();
        if !residual.is_null() {
            *residual = rep.checks.iter().map(|c| c.residual).fold(0.0, f64::max);
        }
        Ok(())
    })
}

/// Unnormalized expectation of a Weyl-Heisenberg string on a uniform chain
/// of `sites` copies of the tensor. `labels` holds one label per site
/// separated by `;`, e.g. `"X;I;Z^2"`.
///
/// # Safety
/// `a` must be a live handle, `labels` a NUL-terminated string and
/// `out_re`, `out_im` writable.
#[no_mangle]
pub unsafe extern "C" fn mftn_mps_expectation(
    a: *const MftnMps,
    sites: usize,
    labels: *const c_char,
    periodic: bool,
    out_re: *mut f64,
    out_im: *mut f64,
) -> MftnStatus {
    guard(|| {
        non_null(a, "mps")?;
        non_null(out_re, "out_re")?;
        non_null(out_im, "out_im")?;
        let labels = str_arg(labels, "labels")?;
        let a = &(*a).0;
        let d = a.phys_dim();
        let strings = labels
            .split(';')
            .map(|s| PauliVector::parse(s.trim(), d).filter(|p| p.n == 1).ok_or_else(|| invalid(format!("bad label `{s}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if strings.len() != sites {
            return Err(invalid(format!("{} labels for {sites} sites", strings.len())));
        }
        let boundary = if periodic { Boundary::Periodic } else { Boundary::Open };
        let family = vec![a.clone(); sites];
        let e = lib(mf_mps::pauli_expectation(&family, &strings, boundary))?;
        *out_re = e.re;
        *out_im = e.im;
        Ok(())
    })
}

/// # Safety
/// `a` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mftn_mps_free(a: *mut MftnMps) {
    if !a.is_null() {
        drop(Box::from_raw(a));
    }
}

/// Runs a command-line invocation, e.g. `{"transfer", "--alpha", "0.5", "--L", "2"}`,
/// without the program name. `out_text` receives the JSON report or help
/// text (free with `mftn_string_free`) and `out_code` the process exit code.
///
/// # Safety
/// `argv` must hold `argc` NUL-terminated strings; `out_text` and
/// `out_code` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mftn_run(
    argc: usize,
    argv: *const *const c_char,
    out_text: *mut *mut c_char,
    out_code: *mut i32,
) -> MftnStatus {
    guard(|| {
        non_null(out_text, "out_text")?;
        non_null(out_code, "out_code")?;
        if argc > 0 {
            non_null(argv, "argv")?;
        }
        let mut args = Vec::with_capacity(argc);
        for i in 0..argc {
            args.push(str_arg(*argv.add(i), "argv entry")?.to_string());
        }
        let o = mftn::cli::dispatch(args);
        let text = CString::new(o.text.replace('\0', " ")).expect("NULs removed");
        *out_text = text.into_raw();
        *out_code = o.code;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, MftnStatus::Panic);
        let msg = unsafe { CStr::from_ptr(mftn_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "boom");
    }

    #[test]
    fn error_kinds_map() {
        assert_eq!(status_of(&Error::NotUnitary(1.0)), MftnStatus::Numerical);
        assert_eq!(status_of(&Error::SymmetryFailed("x".into())), MftnStatus::SymmetryFailed);
        assert_eq!(status_of(&Error::Parse("x".into())), MftnStatus::InvalidArgument);
        assert_eq!(status_of(&Error::Io(std::io::Error::other("x"))), MftnStatus::Io);
    }

    #[test]
    fn success_clears_error() {
        set_error("stale");
        assert_eq!(guard(|| Ok(())), MftnStatus::Ok);
        assert!(mftn_last_error().is_null());
    }
}
