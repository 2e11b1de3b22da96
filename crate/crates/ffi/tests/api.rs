use std::ffi::{CStr, CString};
use std::ptr;

use mftn_ffi::*;

fn last_error() -> String {
    let p = mftn_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn aklt_is_symmetric_and_normalizes() {
    unsafe {
        let mut a = ptr::null_mut();
        assert_eq!(mftn_mps_aklt(&mut a), MftnStatus::Ok);
        assert_eq!((mftn_mps_bond_dim(a), mftn_mps_phys_dim(a)), (2, 3));
        let (mut ok, mut res) = (false, -1.0);
        assert_eq!(mftn_mps_check_symmetry(a, 1e-9, &mut ok, &mut res), MftnStatus::Ok);
        assert!(ok && res < 1e-9);
        let (mut re, mut im) = (0.0, 0.0);
        let labels = CString::new("I;I;I").unwrap();
        assert_eq!(mftn_mps_expectation(a, 3, labels.as_ptr(), true, &mut re, &mut im), MftnStatus::Ok);
        assert!(re > 0.0 && im.abs() < 1e-12);
        mftn_mps_free(a);
    }
}

#[test]
fn spt_from_alpha() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(mftn_basis_weyl_heisenberg(2, &mut b), MftnStatus::Ok);
        assert_eq!(mftn_basis_len(b), 4);
        let re = [3.0, -1.0, -1.0, -1.0];
        let im = [0.0; 4];
        let mut a = ptr::null_mut();
        assert_eq!(mftn_mps_spt(b, re.as_ptr(), im.as_ptr(), 4, &mut a), MftnStatus::Ok);
        let mut ok = false;
        assert_eq!(mftn_mps_check_symmetry(a, 1e-9, &mut ok, ptr::null_mut()), MftnStatus::Ok);
        assert!(ok);
        assert_eq!(mftn_mps_spt(b, re.as_ptr(), im.as_ptr(), 3, &mut a), MftnStatus::InvalidArgument);
        assert!(last_error().contains("3 entries"));
        mftn_mps_free(a);
        mftn_basis_free(b);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut b = ptr::null_mut();
        assert_eq!(mftn_basis_weyl_heisenberg(1, &mut b), MftnStatus::InvalidArgument);
        assert!(last_error().contains("D >= 2"));
        assert_eq!(mftn_mps_aklt(ptr::null_mut()), MftnStatus::NullPointer);
        assert!(last_error().contains("null"));

        let mut a = ptr::null_mut();
        assert_eq!(mftn_mps_aklt(&mut a), MftnStatus::Ok);
        assert!(mftn_last_error().is_null());
        let (mut re, mut im) = (0.0, 0.0);
        let bad = CString::new("I;Q;I").unwrap();
        assert_eq!(mftn_mps_expectation(a, 3, bad.as_ptr(), false, &mut re, &mut im), MftnStatus::InvalidArgument);
        let short = CString::new("I;I").unwrap();
        assert_eq!(mftn_mps_expectation(a, 3, short.as_ptr(), false, &mut re, &mut im), MftnStatus::InvalidArgument);
        let not_utf8 = [0xffu8, 0];
        assert_eq!(
            mftn_mps_expectation(a, 1, not_utf8.as_ptr().cast(), false, &mut re, &mut im),
            MftnStatus::InvalidUtf8
        );
        mftn_mps_free(a);
        mftn_basis_free(ptr::null_mut());
        mftn_mps_free(ptr::null_mut());
        mftn_string_free(ptr::null_mut());
    }
}

#[test]
fn run_matches_cli() {
    let args: Vec<CString> = ["transfer", "--alpha", "0.5", "--L", "2"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let argv: Vec<_> = args.iter().map(|s| s.as_ptr()).collect();
    let (mut text, mut code) = (ptr::null_mut(), -1);
    unsafe {
        assert_eq!(mftn_run(argv.len(), argv.as_ptr(), &mut text, &mut code), MftnStatus::Ok);
        assert_eq!(code, 0);
        let s = CStr::from_ptr(text).to_str().unwrap().to_owned();
        mftn_string_free(text);
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["passed"], true);
        let direct = mftn::cli::dispatch(["transfer", "--alpha", "0.5", "--L", "2"]);
        let d: serde_json::Value = serde_json::from_str(&direct.text).unwrap();
        assert_eq!(v["result"], d["result"]);

        let bogus = CString::new("nope").unwrap();
        let argv = [bogus.as_ptr()];
        assert_eq!(mftn_run(1, argv.as_ptr(), &mut text, &mut code), MftnStatus::Ok);
        assert_eq!(code, 2);
        mftn_string_free(text);
    }
}

#[test]
fn version_is_static() {
    let v = unsafe { CStr::from_ptr(mftn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
