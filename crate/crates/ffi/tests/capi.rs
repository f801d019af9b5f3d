use std::ffi::CStr;
use std::ptr;

use gradphi::gff::{nu_exact, nustar_exact};
use gradphi_ffi::*;

fn last_error() -> String {
    let p = gradphi_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn potential_round_trip() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { gradphi_potential_parse(c"logcosh:1.0".as_ptr(), &mut h) }, GpStatus::Ok);
    let (mut v, mut dv, mut d2) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(gradphi_potential_eval(h, 0.7, &mut v), GpStatus::Ok);
        assert_eq!(gradphi_potential_deriv(h, 0.7, &mut dv), GpStatus::Ok);
        assert_eq!(gradphi_potential_second_deriv(h, 0.7, &mut d2), GpStatus::Ok);
    }
    let x: f64 = 0.7;
    assert!((v - (x * x / 2.0 + x.cosh().ln())).abs() < 1e-14);
    assert!((dv - (x + x.tanh())).abs() < 1e-14);
    assert!((d2 - (1.0 + 1.0 / x.cosh().powi(2))).abs() < 1e-14);
    let mut lambda = 0.0;
    assert_eq!(unsafe { gradphi_potential_lambda(h, &mut lambda) }, GpStatus::Ok);
    assert!(lambda > 0.0 && lambda <= 1.0);
    unsafe { gradphi_potential_free(h) };
}

#[test]
fn bad_spec_sets_error() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { gradphi_potential_parse(c"logcosh".as_ptr(), &mut h) }, GpStatus::InvalidArgument);
    assert!(h.is_null());
    assert!(last_error().contains("separator"));
    assert_eq!(unsafe { gradphi_potential_parse(c"quadratic:-2".as_ptr(), &mut h) }, GpStatus::InvalidArgument);
}

#[test]
fn null_pointers_are_reported() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { gradphi_potential_parse(ptr::null(), &mut h) }, GpStatus::NullPointer);
    assert!(last_error().contains("spec"));
    let mut v = 0.0;
    assert_eq!(unsafe { gradphi_potential_eval(ptr::null(), 1.0, &mut v) }, GpStatus::NullPointer);
    assert_eq!(unsafe { gradphi_gff_l2_trace(ptr::null(), &mut v) }, GpStatus::NullPointer);
    unsafe { gradphi_potential_free(ptr::null_mut()) };
    unsafe { gradphi_gff_free(ptr::null_mut()) };
}

#[test]
fn gff_matches_library() {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { gradphi_gff_new(2, 2, 1.0, &mut g) }, GpStatus::Ok);
    let p = [0.5, -0.25];
    let (mut nu, mut nus, mut tr) = (0.0, 0.0, 0.0);
    let mut grad = [0.0; 2];
    unsafe {
        assert_eq!(gradphi_gff_nu(g, p.as_ptr(), 2, &mut nu), GpStatus::Ok);
        assert_eq!(gradphi_gff_nustar(g, p.as_ptr(), 2, &mut nus), GpStatus::Ok);
        assert_eq!(gradphi_gff_grad_nustar(g, p.as_ptr(), 2, grad.as_mut_ptr()), GpStatus::Ok);
        assert_eq!(gradphi_gff_l2_trace(g, &mut tr), GpStatus::Ok);
    }
    assert_eq!(nu, nu_exact(2, 2, 1.0, &p).unwrap());
    assert_eq!(nus, nustar_exact(2, 2, 1.0, &p).unwrap());
    assert!(tr > 0.0);
    assert!(grad.iter().all(|x| x.is_finite()));
    assert_eq!(unsafe { gradphi_gff_nu(g, p.as_ptr(), 3, &mut nu) }, GpStatus::InvalidArgument);
    unsafe { gradphi_gff_free(g) };
}

#[test]
fn size_and_dimension_errors() {
    let mut g = ptr::null_mut();
    assert_ne!(unsafe { gradphi_gff_new(2, 2, -1.0, &mut g) }, GpStatus::Ok);
    assert!(g.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn extrapolation() {
    let levels = [2u32, 3, 4];
    let values: Vec<f64> = levels.iter().map(|&n| 1.5 + 2.0 * 3f64.powi(-(n as i32))).collect();
    let (mut limit, mut rate) = (0.0, 0.0);
    let s = unsafe { gradphi_extrapolate_limit(levels.as_ptr(), values.as_ptr(), 3, &mut limit, &mut rate) };
    assert_eq!(s, GpStatus::Ok);
    assert!((limit - 1.5).abs() < 1e-10);
    assert!((rate - 1.0).abs() < 1e-8);
}

#[test]
fn quadratic_estimate_is_exact_at_zero_tilt() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { gradphi_potential_parse(c"quadratic:1.0".as_ptr(), &mut h) }, GpStatus::Ok);
    let (mut v, mut se) = (0.0, 0.0);
    let zero = [0.0, 0.0];
    let s = unsafe { gradphi_surface_tension_estimate(h, 2, 1, zero.as_ptr(), 0, 2000, 200, 3, &mut v, &mut se) };
    assert_eq!(s, GpStatus::Ok, "{}", last_error());
    assert!((v - nu_exact(2, 1, 1.0, &zero).unwrap()).abs() < 1e-12);
    assert_eq!(se, 0.0);
    unsafe { gradphi_potential_free(h) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(gradphi_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let src = include_str!("../src/lib.rs");
    let header = include_str!("../include/gradphi.h");
    let names: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(names.len() >= 15);
    for n in names {
        assert!(header.contains(&format!("{}(", n)), "{} missing from header", n);
    }
    assert!(header.contains("GP_STATUS_PANIC = 5"));
}
