use std::ffi::{CStr, CString};
use std::ptr;

use singular_mfg_ffi::*;

const STATIONARY: &str = r#"{
    "schema_version": 1,
    "problem": "stationary",
    "grid": {"dim": 1, "n": 32},
    "model": {"gamma": 1.5},
    "coupling": {"alpha": 1.5, "eps_schedule": [0.1], "weight": 0.0}
}"#;

const TIME: &str = r#"{
    "schema_version": 1,
    "problem": "time",
    "grid": {"dim": 1, "n": 16},
    "model": {"gamma": 1.2, "V": {"fourier": [[0, 0.5, 0.0], [1, 0.5, 0.0]]}},
    "coupling": {"alpha": 1.5, "eps_schedule": [0.1, 0.01]},
    "data": {"terminal": {"fourier": [[1, 0.2, 0.0]]}, "nt": 16}
}"#;

fn last_error() -> String {
    let p = smfg_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn stationary_handle_round_trip() {
    let cfg = CString::new(STATIONARY).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(smfg_stationary_solve(cfg.as_ptr(), &mut h), SmfgStatus::Ok);
        let n = smfg_stationary_len(h);
        assert_eq!(n, 32);
        let mut hbar = 0.0;
        assert_eq!(smfg_stationary_hbar(h, &mut hbar), SmfgStatus::Ok);
        assert!((hbar - 1.0).abs() < 1e-12);
        let mut m = vec![0.0; n];
        assert_eq!(smfg_stationary_copy_m(h, m.as_mut_ptr(), n), SmfgStatus::Ok);
        assert!(m.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let mut short = vec![0.0; 3];
        assert_eq!(smfg_stationary_copy_u(h, short.as_mut_ptr(), 3), SmfgStatus::BufferTooSmall);
        assert!(last_error().contains("need 32"));
        let mut json = ptr::null_mut();
        assert_eq!(smfg_stationary_report_json(h, &mut json), SmfgStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        smfg_string_free(json);
        assert!(text.contains("integrated_hjb"));
        smfg_stationary_free(h);
    }
}

#[test]
fn time_handle_slices() {
    let cfg = CString::new(TIME).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(smfg_time_solve(cfg.as_ptr(), &mut h), SmfgStatus::Ok);
        assert_eq!(smfg_time_nt(h), 16);
        let n = smfg_time_len(h);
        let mut m = vec![0.0; n];
        for k in [0, 8, 16] {
            assert_eq!(smfg_time_copy_m(h, k, m.as_mut_ptr(), n), SmfgStatus::Ok);
            let mass: f64 = m.iter().sum::<f64>() / n as f64;
            assert!((mass - 1.0).abs() < 1e-10);
        }
        assert_eq!(smfg_time_copy_u(h, 17, m.as_mut_ptr(), n), SmfgStatus::Validation);
        let mut json = ptr::null_mut();
        assert_eq!(smfg_time_report_json(h, &mut json), SmfgStatus::Ok);
        smfg_string_free(json);
        smfg_time_free(h);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let bad = CString::new(STATIONARY.replace("\"alpha\": 1.5", "\"alpha\": -2")).unwrap();
    let mut h = ptr::null_mut();
    unsafe {
        assert_eq!(smfg_stationary_solve(bad.as_ptr(), &mut h), SmfgStatus::Validation);
        assert!(h.is_null());
        assert!(last_error().starts_with("validation"));
        assert_eq!(smfg_stationary_solve(ptr::null(), &mut h), SmfgStatus::NullPointer);
        let junk = CString::new("{not json").unwrap();
        assert_eq!(smfg_time_solve(junk.as_ptr(), &mut ptr::null_mut()), SmfgStatus::Validation);
        // null handles are tolerated by the query and free functions
        assert_eq!(smfg_time_nt(ptr::null()), 0);
        smfg_time_free(ptr::null_mut());
        smfg_string_free(ptr::null_mut());
    }
}

#[test]
fn threshold_and_version() {
    let mut a = 0.0;
    assert_eq!(unsafe { smfg_alpha_threshold(4, 1.5, &mut a) }, SmfgStatus::Ok);
    assert!((a - 3.0).abs() < 1e-12);
    assert_eq!(unsafe { smfg_alpha_threshold(4, 2.5, &mut a) }, SmfgStatus::Ok);
    assert!(a.is_infinite());
    assert_eq!(unsafe { smfg_alpha_threshold(2, 0.5, &mut a) }, SmfgStatus::Validation);
    let v = unsafe { CStr::from_ptr(smfg_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/singular_mfg.h")).unwrap();
    let src = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15, "{exports:?}");
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct SmfgTime SmfgTime;"));
}

#[test]
fn header_compiles_as_c() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(format!("{dir}/examples/smoke.c"))
        .status()
    else {
        eprintln!("no C compiler on PATH; skipped");
        return;
    };
    assert!(status.success());
}
