use std::ffi::{CStr, CString};
use std::ptr;

use dualbook_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dualbook_last_error()) }.to_string_lossy().into_owned()
}

const TAPE: &str = "Trddt,Stkprc,Parcha,Trdtims\n\
2009-01-05,10.00,B,100\n\
2009-01-05,10.20,S,50\n\
2009-01-06,10.10,B,80\n\
2009-01-06,bad,S,10\n";

fn planted_rows(rows: usize, cols: usize) -> Vec<f64> {
    // x[t+1] = 0.9 x[t] rotated one bucket, seeded from a fixed row.
    let mut x: Vec<f64> = (0..cols).map(|k| ((k * 7 + 3) % 11) as f64 / 11.0 - 0.5).collect();
    let mut out = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        out.extend_from_slice(&x);
        x = (0..cols).map(|k| 0.9 * x[(k + 1) % cols]).collect();
    }
    out
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(dualbook_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn parse_counts_accepted_and_rejected_rows() {
    let mut tape = ptr::null_mut();
    let status = unsafe { dualbook_tape_parse(TAPE.as_ptr().cast(), TAPE.len(), &mut tape) };
    assert_eq!(status, DualbookStatus::Ok);
    let (mut records, mut rejected) = (0usize, 0usize);
    assert_eq!(unsafe { dualbook_tape_counts(tape, &mut records, &mut rejected) }, DualbookStatus::Ok);
    assert_eq!((records, rejected), (3, 1));
    assert_eq!(last_error(), "");
    unsafe { dualbook_tape_free(tape) };
}

#[test]
fn open_reads_files_and_reports_missing_ones() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    std::fs::write(&path, TAPE).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut tape = ptr::null_mut();
    assert_eq!(unsafe { dualbook_tape_open(c.as_ptr(), &mut tape) }, DualbookStatus::Ok);
    unsafe { dualbook_tape_free(tape) };

    let missing = CString::new(dir.path().join("none.csv").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { dualbook_tape_open(missing.as_ptr(), &mut none) }, DualbookStatus::Io);
    assert!(none.is_null());
    assert!(last_error().contains("none.csv"));
}

#[test]
fn null_arguments_are_reported_not_dereferenced() {
    let mut tape = ptr::null_mut();
    assert_eq!(unsafe { dualbook_tape_open(ptr::null(), &mut tape) }, DualbookStatus::NullPointer);
    assert_eq!(unsafe { dualbook_tape_counts(ptr::null(), ptr::null_mut(), ptr::null_mut()) }, DualbookStatus::NullPointer);
    assert_eq!(unsafe { dualbook_fit(ptr::null(), ptr::null_mut()) }, DualbookStatus::NullPointer);
    assert!(last_error().contains("null"));
    unsafe {
        dualbook_tape_free(ptr::null_mut());
        dualbook_states_free(ptr::null_mut());
        dualbook_fit_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_is_rejected() {
    let bytes = [0xffu8, 0xfe, b'\n'];
    let mut tape = ptr::null_mut();
    assert_eq!(unsafe { dualbook_tape_parse(bytes.as_ptr().cast(), bytes.len(), &mut tape) }, DualbookStatus::InvalidUtf8);
}

#[test]
fn fit_on_planted_rows_has_zero_residuals() {
    let (rows, cols) = (60, 16);
    let values = planted_rows(rows, cols);
    let mut states = ptr::null_mut();
    assert_eq!(unsafe { dualbook_states_from_values(values.as_ptr(), rows, cols, &mut states) }, DualbookStatus::Ok);
    let (mut r, mut c) = (0, 0);
    assert_eq!(unsafe { dualbook_states_shape(states, &mut r, &mut c) }, DualbookStatus::Ok);
    assert_eq!((r, c), (rows, cols));
    let mut back = vec![0.0; rows * cols];
    assert_eq!(unsafe { dualbook_states_values(states, back.as_mut_ptr(), back.len()) }, DualbookStatus::Ok);
    assert_eq!(back, values);

    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { dualbook_fit(states, &mut fit) }, DualbookStatus::Ok);
    let mut s = DualbookFitSummary::default();
    assert_eq!(unsafe { dualbook_fit_summary(fit, &mut s) }, DualbookStatus::Ok);
    assert_eq!((s.rows, s.cols), (rows - 1, cols));
    assert!(s.max_abs_residual < 1e-10, "{}", s.max_abs_residual);
    assert!(s.reconstruction_error < 1e-10);

    let mut dim = 0;
    let mut small = vec![0.0; 10];
    assert_eq!(unsafe { dualbook_fit_beta(fit, small.as_mut_ptr(), small.len(), &mut dim) }, DualbookStatus::BufferTooSmall);
    assert_eq!(dim, 2 * cols);
    let mut beta = vec![0.0; dim * dim];
    assert_eq!(unsafe { dualbook_fit_beta(fit, beta.as_mut_ptr(), beta.len(), ptr::null_mut()) }, DualbookStatus::Ok);
    assert!(beta.iter().any(|v| *v != 0.0));
    let mut res = vec![1.0; s.rows * s.cols];
    assert_eq!(unsafe { dualbook_fit_residuals(fit, res.as_mut_ptr(), res.len()) }, DualbookStatus::Ok);
    assert!(res.iter().all(|v| v.abs() < 1e-10));
    unsafe {
        dualbook_fit_free(fit);
        dualbook_states_free(states);
    }
}

#[test]
fn too_short_states_fail_with_a_message() {
    let values = planted_rows(1, 16);
    let mut states = ptr::null_mut();
    assert_eq!(unsafe { dualbook_states_from_values(values.as_ptr(), 1, 16, &mut states) }, DualbookStatus::Ok);
    let mut fit = ptr::null_mut();
    let status = unsafe { dualbook_fit(states, &mut fit) };
    assert_ne!(status, DualbookStatus::Ok);
    assert!(fit.is_null());
    assert!(!last_error().is_empty());
    unsafe { dualbook_states_free(states) };
}

#[test]
fn states_from_a_short_tape() {
    let mut text = String::from("Trddt,Stkprc,Parcha,Trdtims\n");
    for day in 5..=9 {
        for i in 0..40 {
            let side = if i % 2 == 0 { "B" } else { "S" };
            text.push_str(&format!("2009-01-{day:02},{:.2},{side},{}\n", 10.0 + 0.03 * ((i * day) % 17) as f64, 10 + i));
        }
    }
    let mut tape = ptr::null_mut();
    assert_eq!(unsafe { dualbook_tape_parse(text.as_ptr().cast(), text.len(), &mut tape) }, DualbookStatus::Ok);
    let mut states = ptr::null_mut();
    assert_eq!(unsafe { dualbook_states_from_tape(tape, DualbookVolumeMode::Buy, &mut states) }, DualbookStatus::Ok);
    let (mut r, mut c) = (0, 0);
    unsafe { dualbook_states_shape(states, &mut r, &mut c) };
    assert_eq!((r, c), (4, 16));
    unsafe {
        dualbook_states_free(states);
        dualbook_tape_free(tape);
    }
}

#[test]
fn attenuation_matches_the_closed_form() {
    let (mut approx, mut exact) = (0.0, 0.0);
    assert_eq!(unsafe { dualbook_attenuation(0.5, 0.1, 0.1, &mut approx, &mut exact) }, DualbookStatus::Ok);
    assert!((exact - 0.5 / 1.1).abs() < 1e-15);
    assert!((approx - 0.45).abs() < 1e-15);
    assert_eq!(unsafe { dualbook_attenuation(1.5, 0.1, 0.1, &mut approx, &mut exact) }, DualbookStatus::InvalidInput);
}

#[test]
fn pdo_evolution_conserves_mass_and_translates() {
    let n = 128;
    let h = 0.25;
    let f: Vec<f64> = (0..n).map(|i| (-((i as f64 * h - 16.0).powi(2)) / 2.0).exp()).collect();
    let mut out = vec![0.0; n];
    assert_eq!(unsafe { dualbook_pdo_evolve_1d(f.as_ptr(), n, h, 0.0, 0.3, 1.0, out.as_mut_ptr()) }, DualbookStatus::Ok);
    let (m0, m1): (f64, f64) = (f.iter().sum(), out.iter().sum());
    assert!((m0 - m1).abs() < 1e-10);
    // Drift of one grid step per unit time shifts samples by one index.
    assert_eq!(unsafe { dualbook_pdo_evolve_1d(f.as_ptr(), n, h, h, 0.0, 1.0, out.as_mut_ptr()) }, DualbookStatus::Ok);
    for i in 0..n - 1 {
        assert!((out[i] - f[i + 1]).abs() < 1e-10);
    }
    assert_eq!(unsafe { dualbook_pdo_evolve_1d(f.as_ptr(), n, h, 0.0, -1.0, 1.0, out.as_mut_ptr()) }, DualbookStatus::InvalidInput);
}

#[test]
fn errors_are_per_thread() {
    let mut tape = ptr::null_mut();
    assert_eq!(unsafe { dualbook_tape_open(ptr::null(), &mut tape) }, DualbookStatus::NullPointer);
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert!(!last_error().is_empty());
}
