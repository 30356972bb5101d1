use std::ffi::{CStr, CString};
use std::ptr;

use dlsjm_ffi::*;

fn last_error() -> String {
    let p = dlsjm_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn toy() -> (usize, usize, Vec<u8>) {
    let (n, p) = (12, 5);
    let data = (0..n * p).map(|v| (v < p || (v * 7 + v / 5) % 3 != 0) as u8).collect();
    (n, p, data)
}

#[test]
fn matrix_roundtrip_and_errors() {
    let (n, p, data) = toy();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dlsjm_matrix_new(n, p, data.as_ptr(), &mut m) }, DlsjmStatus::Ok);
    let (mut a, mut b) = (0, 0);
    assert_eq!(unsafe { dlsjm_matrix_dims(m, &mut a, &mut b) }, DlsjmStatus::Ok);
    assert_eq!((a, b), (n, p));
    unsafe { dlsjm_matrix_free(m) };

    let bad = vec![2u8; 4];
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dlsjm_matrix_new(2, 2, bad.as_ptr(), &mut m) }, DlsjmStatus::InvalidInput);
    assert!(m.is_null());
    assert!(last_error().contains("non-binary"));

    assert_eq!(unsafe { dlsjm_matrix_new(2, 2, ptr::null(), &mut m) }, DlsjmStatus::NullPointer);
    let missing = CString::new("/nonexistent/x.csv").unwrap();
    assert_eq!(unsafe { dlsjm_matrix_load(missing.as_ptr(), &mut m) }, DlsjmStatus::InvalidInput);
    unsafe { dlsjm_matrix_free(ptr::null_mut()) };
    assert!(!unsafe { CStr::from_ptr(dlsjm_version()) }.to_bytes().is_empty());
}

#[test]
fn fit_exposes_summaries() {
    let (n, p, data) = toy();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { dlsjm_matrix_new(n, p, data.as_ptr(), &mut m) }, DlsjmStatus::Ok);
    let mut opts = dlsjm_sampler_options_default();
    assert_eq!(opts.n_iterations, 55_000);
    opts.n_iterations = 600;
    opts.burn_in = 100;
    opts.adapt_window = 50;
    opts.seed = 9;
    let mut f = ptr::null_mut();
    assert_eq!(unsafe { dlsjm_fit(m, &opts, &mut f) }, DlsjmStatus::Ok, "{}", last_error());
    assert_eq!(unsafe { dlsjm_fit_sample_count(f) }, 50);

    let mut d = vec![0.0; n * n];
    assert_eq!(unsafe { dlsjm_fit_person_distances(f, d.as_mut_ptr(), d.len()) }, DlsjmStatus::Ok);
    for k in 0..n {
        assert_eq!(d[k * n + k], 0.0);
        for l in 0..n {
            assert_eq!(d[k * n + l], d[l * n + k]);
        }
    }
    let mut short = vec![0.0; p * p - 1];
    assert_eq!(
        unsafe { dlsjm_fit_item_distances(f, short.as_mut_ptr(), short.len()) },
        DlsjmStatus::BufferTooSmall
    );
    let blocks = unsafe { dlsjm_fit_block_count(f) };
    let mut rates = vec![0.0; blocks];
    assert_eq!(unsafe { dlsjm_fit_acceptance_rates(f, rates.as_mut_ptr(), blocks) }, DlsjmStatus::Ok);
    assert!(rates.iter().all(|r| r.is_nan() || (0.0..=1.0).contains(r)));

    let mut labels = vec![99usize; n];
    assert_eq!(
        unsafe { dlsjm_spectral_cluster(d.as_ptr(), n, 2, n - 1, 1, labels.as_mut_ptr()) },
        DlsjmStatus::Ok,
        "{}",
        last_error()
    );
    assert!(labels.iter().all(|&l| l < 2));
    unsafe {
        dlsjm_fit_free(f);
        dlsjm_matrix_free(m);
    }
}

#[test]
fn run_fit_requires_paths() {
    let out = CString::new("/tmp/unused").unwrap();
    assert_eq!(unsafe { dlsjm_run_fit(ptr::null(), ptr::null(), out.as_ptr(), 1) }, DlsjmStatus::NullPointer);
}
