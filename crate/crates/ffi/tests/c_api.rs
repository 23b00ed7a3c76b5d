use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use distlq_ffi::*;

fn fixture(name: &str) -> *mut DlqProblem {
    let name = CString::new(name).unwrap();
    let mut p = ptr::null_mut();
    let status = unsafe { dlq_problem_from_fixture(name.as_ptr(), &mut p) };
    assert_eq!(status, DlqStatus::Ok);
    assert!(!p.is_null());
    p
}

fn last_error() -> String {
    let msg = dlq_last_error_message();
    assert!(!msg.is_null());
    unsafe { CStr::from_ptr(msg) }.to_string_lossy().into_owned()
}

#[test]
fn solve_appendix_d() {
    let p = fixture("appendix-d");
    unsafe {
        assert_eq!(dlq_problem_dim(p), 3);
        let mut qi = false;
        assert_eq!(dlq_is_qi(p, &mut qi), DlqStatus::Ok);
        assert!(qi);
        let mut z = [0.0; 3];
        let mut j = 0.0;
        assert_eq!(dlq_solve(p, false, z.as_mut_ptr(), 3, &mut j), DlqStatus::Ok);
        assert!((j - 0.5918).abs() < 1e-3);
        let mut f = 0.0;
        assert_eq!(dlq_exact_cost(p, z.as_ptr(), 3, &mut f), DlqStatus::Ok);
        assert!((f - j).abs() < 1e-10);
        let mut d = 0.0;
        assert_eq!(dlq_disturbance_constant(p, &mut d), DlqStatus::Ok);
        assert!((d - 918.0).abs() < 1e-9);
        dlq_problem_free(p);
    }
}

#[test]
fn non_qi_maps_to_precondition() {
    let p = fixture("b3");
    unsafe {
        let mut z = [0.0; 2];
        let mut j = 0.0;
        assert_eq!(dlq_solve(p, false, z.as_mut_ptr(), 2, &mut j), DlqStatus::Precondition);
        assert!(last_error().contains("--direct"));
        assert_eq!(dlq_solve(p, true, z.as_mut_ptr(), 2, &mut j), DlqStatus::Ok);
        dlq_problem_free(p);
    }
}

#[test]
fn bad_inputs_are_reported() {
    unsafe {
        let mut p = ptr::null_mut();
        let name = CString::new("nope").unwrap();
        assert_eq!(dlq_problem_from_fixture(name.as_ptr(), &mut p), DlqStatus::InvalidInput);
        assert!(p.is_null());
        assert!(last_error().contains("unknown fixture"));

        assert_eq!(dlq_problem_from_fixture(ptr::null(), &mut p), DlqStatus::NullPointer);
        let json = CString::new(r#"{"system": {"fixture": "b2"}, "bogus": 1}"#).unwrap();
        assert_eq!(dlq_problem_from_config_json(json.as_ptr(), &mut p), DlqStatus::InvalidInput);
        assert!(last_error().contains("bogus"));

        let q = fixture("b2");
        let z = [0.0; 2];
        let mut f = 0.0;
        assert_eq!(dlq_exact_cost(q, z.as_ptr(), 2, &mut f), DlqStatus::InvalidInput);
        assert_eq!(dlq_exact_cost(ptr::null(), z.as_ptr(), 3, &mut f), DlqStatus::NullPointer);
        assert_eq!(dlq_problem_dim(ptr::null()), 0);
        dlq_problem_free(q);
        dlq_problem_free(ptr::null_mut());
    }
}

#[test]
fn learn_is_deterministic_and_zero_step_is_identity() {
    let p = fixture("appendix-d");
    unsafe {
        let z0 = [1.5, -1.0, -2.0];
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        assert_eq!(dlq_learn(p, 5e-4, 0.1, 500, 7, z0.as_ptr(), a.as_mut_ptr(), 3), DlqStatus::Ok);
        assert_eq!(dlq_learn(p, 5e-4, 0.1, 500, 7, z0.as_ptr(), b.as_mut_ptr(), 3), DlqStatus::Ok);
        assert_eq!(a, b);
        assert_ne!(a, z0);
        assert_eq!(dlq_learn(p, 0.0, 0.1, 1, 7, z0.as_ptr(), a.as_mut_ptr(), 3), DlqStatus::Ok);
        assert_eq!(a, z0);
        assert_eq!(dlq_learn(p, 5e-4, -1.0, 1, 7, z0.as_ptr(), a.as_mut_ptr(), 3), DlqStatus::InvalidInput);
        dlq_problem_free(p);
    }
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(dlq_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/distlq.h");
    let text = std::fs::read_to_string(&header).expect("header generated by build.rs");
    for symbol in [
        "typedef struct DlqProblem DlqProblem",
        "DLQ_STATUS_PRECONDITION = 3",
        "dlq_problem_from_fixture",
        "dlq_problem_from_config_json",
        "dlq_problem_free",
        "dlq_problem_dim",
        "dlq_is_qi",
        "dlq_exact_cost",
        "dlq_solve",
        "dlq_learn",
        "dlq_disturbance_constant",
        "dlq_last_error_message",
        "dlq_version",
    ] {
        assert!(text.contains(symbol), "missing {symbol}");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/distlq.h");
    match Command::new("cc").args(["-fsyntax-only", "-x", "c", "-std=c99", "-Wall", "-Werror"]).arg(&header).status() {
        Ok(status) => assert!(status.success(), "cc rejected {}", header.display()),
        Err(_) => eprintln!("no C compiler on PATH; header syntax not checked"),
    }
}
