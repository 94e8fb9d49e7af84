use std::ffi::{CStr, CString};
use std::ptr;

use npksd_ffi::*;
use serde_json::Value;

fn take_string(p: *mut std::ffi::c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { npksd_string_free(p) };
    s
}

fn last_error() -> String {
    let p = npksd_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn samples_round_trip() {
    let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { npksd_samples_new(data.as_ptr(), 3, 2, &mut s) }, NpksdStatus::Ok);
    assert_eq!(unsafe { npksd_samples_rows(s) }, 3);
    assert_eq!(unsafe { npksd_samples_cols(s) }, 2);
    let mut back = [0.0; 6];
    assert_eq!(unsafe { npksd_samples_copy(s, back.as_mut_ptr(), 6) }, NpksdStatus::Ok);
    assert_eq!(back, data);
    assert_eq!(unsafe { npksd_samples_copy(s, back.as_mut_ptr(), 5) }, NpksdStatus::InvalidArgument);
    unsafe { npksd_samples_free(s) };
}

#[test]
fn errors_are_reported_with_codes_and_messages() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { npksd_samples_new(ptr::null(), 1, 1, &mut s) }, NpksdStatus::NullPointer);
    assert!(last_error().contains("data"));

    // non-finite values are accepted at construction and rejected when used
    let nan = [0.0, f64::NAN];
    assert_eq!(unsafe { npksd_samples_new(nan.as_ptr(), 1, 2, &mut s) }, NpksdStatus::Ok);
    let mut g = ptr::null_mut();
    let mut v = 0.0;
    assert_eq!(unsafe { npksd_generator_gvd(2, 0.0, &mut g) }, NpksdStatus::Ok);
    assert_eq!(unsafe { npksd_ksd_v(s, g, 1.0, &mut v) }, NpksdStatus::Numerical);
    unsafe {
        npksd_samples_free(s);
        npksd_generator_free(g);
    }

    assert_eq!(unsafe { npksd_generator_mog(3, 0.9, &mut g) }, NpksdStatus::Numerical);
    assert!(last_error().contains("positive definite"));

    let path = CString::new("/no/such/file.csv").unwrap();
    assert_eq!(unsafe { npksd_samples_from_csv(path.as_ptr(), &mut s) }, NpksdStatus::Io);
    assert!(last_error().contains("/no/such/file.csv"));

    // freeing null handles is a no-op
    unsafe {
        npksd_samples_free(ptr::null_mut());
        npksd_generator_free(ptr::null_mut());
        npksd_model_free(ptr::null_mut());
        npksd_string_free(ptr::null_mut());
    }
}

#[test]
fn fit_and_dump_model() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { npksd_generator_gvd(2, 0.0, &mut g) }, NpksdStatus::Ok);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { npksd_generator_sample(g, 20_000, 5, &mut s) }, NpksdStatus::Ok);
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { npksd_model_fit(s, false, 1, 1e-6, &mut m) }, NpksdStatus::Ok);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { npksd_model_to_json(m, &mut json) }, NpksdStatus::Ok);
    let model: Value = serde_json::from_str(&take_string(json)).unwrap();
    let slope = model["coefficients"][0][1].as_f64().unwrap();
    assert!((slope + 1.0).abs() < 0.05, "slope {slope}");
    assert_eq!(unsafe { npksd_model_fit(s, false, 0, 1e-6, &mut m) }, NpksdStatus::InvalidArgument);
    unsafe {
        npksd_model_free(m);
        npksd_samples_free(s);
        npksd_generator_free(g);
    }
}

#[test]
fn ksd_is_larger_for_a_shifted_sample() {
    let mut null = ptr::null_mut();
    let mut wide = ptr::null_mut();
    unsafe {
        assert_eq!(npksd_generator_gvd(2, 0.0, &mut null), NpksdStatus::Ok);
        assert_eq!(npksd_generator_gvd(2, 2.0, &mut wide), NpksdStatus::Ok);
    }
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    let (mut va, mut vb) = (0.0, 0.0);
    unsafe {
        npksd_generator_sample(null, 300, 1, &mut a);
        npksd_generator_sample(wide, 300, 1, &mut b);
        assert_eq!(npksd_ksd_v(a, null, 1.0, &mut va), NpksdStatus::Ok);
        assert_eq!(npksd_ksd_v(b, null, 1.0, &mut vb), NpksdStatus::Ok);
        assert_eq!(npksd_ksd_v(a, null, -1.0, &mut va), NpksdStatus::InvalidArgument);
        npksd_samples_free(a);
        npksd_samples_free(b);
        npksd_generator_free(null);
        npksd_generator_free(wide);
    }
    assert!(vb > va);
}

#[test]
fn npksd_test_returns_report_json() {
    let mut g = ptr::null_mut();
    let mut obs = ptr::null_mut();
    unsafe {
        npksd_generator_gvd(3, 0.0, &mut g);
        npksd_generator_sample(g, 50, 11, &mut obs);
    }
    let cfg = CString::new(r#"{"n": 50, "N": 200, "B": 6, "b": 30, "seed": 3}"#).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { npksd_test_json(obs, g, cfg.as_ptr(), &mut json) }, NpksdStatus::Ok);
    let report: Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(report["null_draws"].as_array().unwrap().len(), 30);
    let p = report["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);

    let bad = CString::new(r#"{"n": 50, "N": 200, "B": 6, "b": 30, "colour": 1}"#).unwrap();
    assert_eq!(unsafe { npksd_test_json(obs, g, bad.as_ptr(), &mut json) }, NpksdStatus::Parse);
    assert!(last_error().contains("colour"));
    unsafe {
        npksd_samples_free(obs);
        npksd_generator_free(g);
    }
}

#[test]
fn run_json_executes_any_method() {
    let cfg = CString::new(
        r#"{"method": "ksd", "model": {"kind": "gvd", "dim": 2}, "test": {"n": 40, "N": 40, "B": 2, "b": 40, "seed": 8}}"#,
    )
    .unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { npksd_run_json(cfg.as_ptr(), &mut json) }, NpksdStatus::Ok);
    let report: Value = serde_json::from_str(&take_string(json)).unwrap();
    assert_eq!(report["n"], 40);
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/npksd.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ NpksdSamples *s = 0; return npksd_samples_rows(s) == 0 && NPKSD_STATUS_OK == 0 ? 0 : 1; }}\n"
        ),
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .status()
        .expect("a C compiler is available");
    assert!(status.success());
}
