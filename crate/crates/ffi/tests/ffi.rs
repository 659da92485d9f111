use std::ffi::{CStr, CString, c_char};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use voi_ffi::*;

fn last_error() -> String {
    let p = voi_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

/// alpha = phi1 + phi2 with independent standard normal parts.
fn sum_table(k: usize) -> *mut VoiTable {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let phi1: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let phi2: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let alpha: Vec<f64> = phi1.iter().zip(&phi2).map(|(a, b)| a + b).collect();
    let names = [c"phi1", c"phi2", c"alpha"];
    let name_ptrs: Vec<*const c_char> = names.iter().map(|n| n.as_ptr()).collect();
    let cols = [phi1.as_ptr(), phi2.as_ptr(), alpha.as_ptr()];
    let mut out = ptr::null_mut();
    let st = unsafe { voi_table_from_columns(name_ptrs.as_ptr(), cols.as_ptr(), 3, k, &mut out) };
    assert_eq!(st, VoiStatus::Ok);
    out
}

#[test]
fn table_round_trip() {
    let t = sum_table(100);
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { voi_table_shape(t, &mut r, &mut c) }, VoiStatus::Ok);
    assert_eq!((r, c), (100, 3));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("t.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { voi_table_write_csv(t, path.as_ptr()) }, VoiStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { voi_table_read_csv(path.as_ptr(), &mut back) }, VoiStatus::Ok);

    let mut a = vec![0.0; 100];
    let mut b = vec![0.0; 100];
    unsafe {
        assert_eq!(voi_table_column(t, c"alpha".as_ptr(), a.as_mut_ptr(), 100), VoiStatus::Ok);
        assert_eq!(voi_table_column(back, c"alpha".as_ptr(), b.as_mut_ptr(), 100), VoiStatus::Ok);
        voi_table_free(back);
        voi_table_free(t);
    }
    assert_eq!(a, b);
}

#[test]
fn errors_carry_status_and_message() {
    let t = sum_table(50);
    let mut buf = [0.0; 50];
    unsafe {
        assert_eq!(voi_table_column(t, c"nope".as_ptr(), buf.as_mut_ptr(), 50), VoiStatus::UnknownColumn);
        assert!(last_error().contains("nope"));
        assert_eq!(voi_table_column(t, c"alpha".as_ptr(), buf.as_mut_ptr(), 10), VoiStatus::InvalidArgument);
        assert_eq!(voi_table_column(ptr::null(), c"alpha".as_ptr(), buf.as_mut_ptr(), 50), VoiStatus::NullPointer);
        assert_eq!(voi_table_shape(t, ptr::null_mut(), ptr::null_mut()), VoiStatus::NullPointer);

        let mut out = ptr::null_mut();
        assert_eq!(voi_table_read_csv(c"/no/such/file.csv".as_ptr(), &mut out), VoiStatus::Io);
        assert!(out.is_null());
        assert_eq!(voi_simulate_statistics(t, 99, 10, 1, &mut out), VoiStatus::InvalidArgument);
        assert!(last_error().contains("99"));

        // Success clears the message.
        let (mut r, mut c) = (0, 0);
        assert_eq!(voi_table_shape(t, &mut r, &mut c), VoiStatus::Ok);
        assert!(voi_last_error().is_null());
        voi_table_free(t);
        voi_table_free(ptr::null_mut());
    }
}

#[test]
fn ragged_or_bad_columns_are_rejected() {
    let x = [1.0, f64::NAN];
    let names = [c"x".as_ptr()];
    let cols = [x.as_ptr()];
    let mut out = ptr::null_mut();
    let st = unsafe { voi_table_from_columns(names.as_ptr(), cols.as_ptr(), 1, 2, &mut out) };
    assert_eq!(st, VoiStatus::InvalidArgument);
    assert!(out.is_null());
}

#[test]
fn evppi_of_half_the_sum() {
    let t = sum_table(20_000);
    let inputs = [c"phi1".as_ptr()];
    let mut e = VoiEstimate {
        value: 0.0,
        baseline: 0.0,
        proportion: 0.0,
        se: 0.0,
        k_used: 0,
    };
    let st = unsafe { voi_evppi_scalar(t, inputs.as_ptr(), 1, c"alpha".as_ptr(), 1, &mut e) };
    assert_eq!(st, VoiStatus::Ok);
    assert!((e.proportion - 0.5).abs() < 0.03, "{e:?}");
    assert!(e.se > 0.0);
    assert_eq!(e.k_used, 20_000);
    unsafe { voi_table_free(t) };
}

#[test]
fn sampler_statistics_and_evsi() {
    let mut draws = ptr::null_mut();
    let st = unsafe { voi_run_sampler(ptr::null(), VoiScenario::Base as u32, 4000, 2, 2000, 3, &mut draws) };
    assert_eq!(st, VoiStatus::Ok, "{}", last_error());
    let (mut r, mut c) = (0, 0);
    unsafe { voi_table_shape(draws, &mut r, &mut c) };
    assert_eq!(r, 4000);

    let mut stats = ptr::null_mut();
    let st = unsafe { voi_simulate_statistics(draws, VoiDesign::GumAnon as u32, 500, 1, &mut stats) };
    assert_eq!(st, VoiStatus::Ok);
    let mut t = vec![0.0; r];
    assert_eq!(unsafe { voi_table_column(stats, c"T_gumanon".as_ptr(), t.as_mut_ptr(), r) }, VoiStatus::Ok);
    assert!(t.iter().all(|v| (0.0..=1.0).contains(v)));

    let mut e = VoiEstimate {
        value: f64::NAN,
        baseline: 0.0,
        proportion: 0.0,
        se: 0.0,
        k_used: 0,
    };
    let st = unsafe { voi_evsi_scalar(draws, VoiDesign::Gmshs as u32, 0, c"mu_U".as_ptr(), 1, &mut e) };
    assert_eq!(st, VoiStatus::Ok);
    assert_eq!(e.value, 0.0);
    let st = unsafe { voi_evsi_scalar(draws, VoiDesign::Gmshs as u32, 1000, c"mu_U".as_ptr(), 1, &mut e) };
    assert_eq!(st, VoiStatus::Ok);
    assert!(e.value >= 0.0 && e.value <= e.baseline);

    assert_eq!(
        unsafe { voi_run_sampler(ptr::null(), 7, 100, 1, 10, 1, &mut stats) },
        VoiStatus::InvalidArgument
    );
    unsafe {
        voi_table_free(stats);
        voi_table_free(draws);
    }
}

#[test]
fn header_is_valid_c_and_cpp() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include").join("voi.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for f in ["voi_last_error", "voi_table_free", "voi_evppi_scalar", "voi_evsi_scalar", "voi_run_sampler"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    assert!(text.contains("typedef struct VoiTable VoiTable;"));
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .output()
        else {
            eprintln!("{compiler} not found; skipping compile check");
            continue;
        };
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
