use std::ffi::{c_char, CStr, CString};
use std::ptr;

use blockrg_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = rg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    rg_string_free(p);
    s
}

const RING16: &str = r#"{"geometry":"square_1d","extent":[16],"boundary":{"kind":"periodic"}}"#;
const NN: &str = r#"{"dim":1,"translation_invariant":true,"couplings":{"[[0],[1]]":0.5}}"#;
const DECIMATION: &str = r#"{"kind":"decimation","b":2}"#;

#[test]
fn renormalize_through_handles() {
    unsafe {
        let mut lat = ptr::null_mut();
        assert_eq!(rg_lattice_new(c(RING16).as_ptr(), &mut lat), RgStatus::Ok);
        let mut n = 0usize;
        assert_eq!(rg_lattice_num_sites(lat, &mut n), RgStatus::Ok);
        assert_eq!(n, 16);
        let mut j = ptr::null_mut();
        assert_eq!(rg_interaction_from_json(c(NN).as_ptr(), &mut j), RgStatus::Ok);

        let (mut img, mut jp) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(rg_renormalize(lat, j, c(DECIMATION).as_ptr(), 1e-12, &mut img, &mut jp), RgStatus::Ok);
        assert_eq!(rg_lattice_num_sites(img, &mut n), RgStatus::Ok);
        assert_eq!(n, 8);
        let mut v = 0.0;
        assert_eq!(rg_interaction_get(jp, c("[[0],[1]]").as_ptr(), &mut v), RgStatus::Ok);
        assert!((v - 0.5 * 1f64.cosh().ln()).abs() < 1e-12);
        assert_eq!(rg_interaction_get(jp, c("[[0],[2]]").as_ptr(), &mut v), RgStatus::Ok);
        assert_eq!(v, 0.0);

        let mut text = ptr::null_mut();
        assert_eq!(rg_interaction_to_json(jp, &mut text), RgStatus::Ok);
        let json = take(text);
        let mut back = ptr::null_mut();
        assert_eq!(rg_interaction_from_json(c(&json).as_ptr(), &mut back), RgStatus::Ok);
        assert_eq!(rg_interaction_get(back, c("[[3],[4]]").as_ptr(), &mut v), RgStatus::Ok);
        assert!((v - 0.5 * 1f64.cosh().ln()).abs() < 1e-12);

        for h in [back, jp, j] {
            rg_interaction_free(h);
        }
        rg_lattice_free(img);
        rg_lattice_free(lat);
        rg_lattice_free(ptr::null_mut());
        rg_interaction_free(ptr::null_mut());
    }
}

#[test]
fn derivative_and_counting() {
    unsafe {
        let mut lat = ptr::null_mut();
        let spec = r#"{"geometry":"square_2d","extent":[4,4],"boundary":{"kind":"periodic"}}"#;
        assert_eq!(rg_lattice_new(c(spec).as_ptr(), &mut lat), RgStatus::Ok);
        let mut j = ptr::null_mut();
        assert_eq!(rg_interaction_from_json(c(r#"{"dim":2,"couplings":{}}"#).as_ptr(), &mut j), RgStatus::Ok);
        let mut v = -1.0;
        let st = rg_partial_derivative(lat, j, c(DECIMATION).as_ptr(), c("[[1,0]]").as_ptr(), c("[[2,0]]").as_ptr(), &mut v);
        assert_eq!(st, RgStatus::Ok);
        assert_eq!(v, 1.0);
        let st = rg_partial_derivative(lat, j, c(DECIMATION).as_ptr(), c("[[1,0]]").as_ptr(), c("[[1,0]]").as_ptr(), &mut v);
        assert_eq!(st, RgStatus::Ok);
        assert_eq!(v, 0.0);
        rg_interaction_free(j);
        rg_lattice_free(lat);

        let triangle = [0u8, 1, 1, 1, 0, 1, 1, 1, 0];
        let mut u = 0i64;
        assert_eq!(rg_ursell(triangle.as_ptr(), 3, &mut u), RgStatus::Ok);
        assert_eq!(u, 2);

        let mut eps = 0.0;
        assert_eq!(rg_epsilon_threshold(2, 1, 1, 2, 1, &mut eps), RgStatus::Ok);
        let l2 = 2f64.ln();
        assert!((eps - l2 / (16.0 * (1.0 + l2))).abs() < 1e-15);
        assert_eq!(rg_epsilon_threshold(2, 1, 1, 2, 0, &mut eps), RgStatus::Invalid);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut lat = ptr::null_mut();
        assert_eq!(rg_lattice_new(ptr::null(), &mut lat), RgStatus::NullPointer);
        assert!(last_error().contains("spec_json"));
        assert_eq!(rg_lattice_new(c("{").as_ptr(), &mut lat), RgStatus::Invalid);
        assert!(lat.is_null());
        let bad = [0xffu8, 0];
        assert_eq!(rg_lattice_new(bad.as_ptr() as *const c_char, &mut lat), RgStatus::Utf8);

        let ring9 = r#"{"geometry":"square_1d","extent":[9],"boundary":{"kind":"periodic"}}"#;
        assert_eq!(rg_lattice_new(c(ring9).as_ptr(), &mut lat), RgStatus::Ok);
        assert!(rg_last_error().is_null());
        let mut j = ptr::null_mut();
        assert_eq!(rg_interaction_from_json(c(NN).as_ptr(), &mut j), RgStatus::Ok);
        let (mut img, mut jp) = (ptr::null_mut(), ptr::null_mut());
        let st = rg_renormalize(lat, j, c(DECIMATION).as_ptr(), 0.0, &mut img, &mut jp);
        assert_eq!(st, RgStatus::Invalid);
        assert!(last_error().contains("incommensurate"));
        assert!(img.is_null() && jp.is_null());
        rg_interaction_free(j);
        rg_lattice_free(lat);
    }
}

#[test]
fn run_config_returns_report_and_status() {
    unsafe {
        let cfg = r#"{"subcommand":"count","count":{"params":{"p":2,"r":1,"c_link":1,"m":2},"n_max":5}}"#;
        let mut out = ptr::null_mut();
        assert_eq!(rg_run_config(c(cfg).as_ptr(), &mut out), RgStatus::Ok);
        let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(report["schema"], "blockrg.report/1");
        let csv = report["artifact_contents"]["coefficients.csv"].as_str().unwrap();
        assert!(csv.lines().nth(5).unwrap().starts_with("5,42,"));

        let divergent = r#"{"subcommand":"count","count":{"params":{"p":2,"r":1,"c_link":1,"m":2},"eps":0.1}}"#;
        let mut out = ptr::null_mut();
        assert_eq!(rg_run_config(c(divergent).as_ptr(), &mut out), RgStatus::Divergent);
        let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(report["divergent"], true);

        let capped = r#"{"subcommand":"renormalize","caps":{"max_table_width":2},
            "lattice":{"geometry":"square_2d","extent":[4,4],"boundary":{"kind":"periodic"}},
            "interaction":{"nearest_neighbor":{"beta":0.5}},"kernel":{"kind":"decimation","b":2}}"#;
        let mut out = ptr::null_mut();
        assert_eq!(rg_run_config(c(capped).as_ptr(), &mut out), RgStatus::CapExceeded);
        assert!(out.is_null());
        assert_eq!(rg_run_config(c(r#"{"subcommand":"nope"}"#).as_ptr(), &mut out), RgStatus::Invalid);
    }
}
