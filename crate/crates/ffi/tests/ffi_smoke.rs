//! Drives the C ABI end to end from Rust: simulate, fit, inspect, predict,
//! cluster, and exercise the error paths.

use std::ffi::CStr;
use std::ptr;

use warpreg_ffi::*;

#[test]
fn version_is_nonempty() {
    let v = unsafe { CStr::from_ptr(warpreg_version()) };
    assert!(!v.to_str().unwrap().is_empty());
}

#[test]
fn simulate_fit_predict_cluster_roundtrip() {
    unsafe {
        let mut dataset: *mut WarpregDataset = ptr::null_mut();
        let status = warpreg_dataset_simulate(1, 6, 40, 7, &mut dataset);
        assert_eq!(status, WarpregStatus::Ok);
        assert_eq!(warpreg_dataset_num_curves(dataset), 6);

        let mut fit: *mut WarpregFit = ptr::null_mut();
        let status = warpreg_fit_run(dataset, 5, 6, 30, 120, 0.75, 5, 11, &mut fit);
        assert_eq!(status, WarpregStatus::Ok);
        assert_eq!(warpreg_fit_num_curves(fit), 6);
        assert_eq!(warpreg_fit_num_shape_coeffs(fit), 5);
        assert_eq!(warpreg_fit_num_warp_increments(fit), 5);

        let mut coeffs = [0.0f64; 5];
        assert_eq!(
            warpreg_fit_shape_coeffs(fit, coeffs.as_mut_ptr(), coeffs.len()),
            WarpregStatus::Ok
        );
        assert!(coeffs.iter().all(|c| c.is_finite()));

        let mut noise = 0.0;
        assert_eq!(warpreg_fit_noise_var(fit, &mut noise), WarpregStatus::Ok);
        assert!(noise > 0.0);
        let mut tau = 0.0;
        assert_eq!(warpreg_fit_concentration(fit, &mut tau), WarpregStatus::Ok);
        assert!(tau > 0.0);
        let mut cov = [0.0f64; 4];
        assert_eq!(
            warpreg_fit_amp_cov(fit, cov.as_mut_ptr(), cov.len()),
            WarpregStatus::Ok
        );
        assert_eq!(cov[1], cov[2]);

        let mut increments = [0.0f64; 5];
        assert_eq!(
            warpreg_fit_warp_increments(fit, 2, increments.as_mut_ptr(), increments.len()),
            WarpregStatus::Ok
        );
        let total: f64 = increments.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);

        let id = warpreg_fit_curve_id(fit, 0);
        assert!(!id.is_null());
        assert_eq!(CStr::from_ptr(id).to_str().unwrap(), "c001");
        warpreg_string_free(id);

        let ts = [0.0, 0.25, 0.5, 0.75, 1.0];
        let mut y_hat = [0.0f64; 5];
        let mut h_hat = [0.0f64; 5];
        assert_eq!(
            warpreg_fit_predict(
                fit,
                0,
                ts.as_ptr(),
                ts.len(),
                y_hat.as_mut_ptr(),
                h_hat.as_mut_ptr()
            ),
            WarpregStatus::Ok
        );
        assert_eq!(h_hat[0], 0.0);
        assert_eq!(h_hat[4], 1.0);
        assert!(h_hat.windows(2).all(|p| p[0] < p[1]));
        assert!(y_hat.iter().all(|y| y.is_finite()));

        let mut labels = [0usize; 6];
        assert_eq!(
            warpreg_cluster_warps(fit, 2, 3, 5, labels.as_mut_ptr(), labels.len()),
            WarpregStatus::Ok
        );
        assert!(labels.iter().all(|l| *l < 2));

        let mut rate = 0.0;
        assert_eq!(warpreg_fit_accept_rate(fit, 0, &mut rate), WarpregStatus::Ok);
        assert!((0.0..=1.0).contains(&rate));

        warpreg_fit_free(fit);
        warpreg_dataset_free(dataset);
    }
}

#[test]
fn dataset_from_arrays_validates() {
    unsafe {
        let counts = [3usize, 2];
        let ts = [0.0, 0.5, 1.0, 0.0, 1.0];
        let ys = [1.0, 2.0, 3.0, 4.0, 5.0];
        let mut dataset: *mut WarpregDataset = ptr::null_mut();
        let status = warpreg_dataset_from_arrays(
            2,
            counts.as_ptr(),
            ts.as_ptr(),
            ys.as_ptr(),
            &mut dataset,
        );
        assert_eq!(status, WarpregStatus::Ok);
        assert_eq!(warpreg_dataset_num_curves(dataset), 2);
        warpreg_dataset_free(dataset);

        // Non-increasing times are rejected with a message.
        let bad_ts = [0.0, 0.5, 0.5, 0.0, 1.0];
        let status = warpreg_dataset_from_arrays(
            2,
            counts.as_ptr(),
            bad_ts.as_ptr(),
            ys.as_ptr(),
            &mut dataset,
        );
        assert_eq!(status, WarpregStatus::InvalidArgument);
        let msg = CStr::from_ptr(warpreg_last_error_message());
        assert!(!msg.to_str().unwrap().is_empty());
    }
}

#[test]
fn error_paths_return_codes() {
    unsafe {
        let mut dataset: *mut WarpregDataset = ptr::null_mut();
        assert_eq!(
            warpreg_dataset_from_csv(ptr::null(), &mut dataset),
            WarpregStatus::NullPointer
        );
        let path = std::ffi::CString::new("/nonexistent/warpreg.csv").unwrap();
        assert_eq!(
            warpreg_dataset_from_csv(path.as_ptr(), &mut dataset),
            WarpregStatus::IoError
        );
        assert_eq!(
            warpreg_dataset_simulate(9, 3, 10, 0, &mut dataset),
            WarpregStatus::InvalidArgument
        );

        assert_eq!(
            warpreg_dataset_simulate(1, 3, 10, 0, &mut dataset),
            WarpregStatus::Ok
        );
        let mut fit: *mut WarpregFit = ptr::null_mut();
        // Shape basis smaller than the cubic order must fail cleanly.
        assert_eq!(
            warpreg_fit_run(dataset, 2, 6, 5, 10, 0.75, 2, 0, &mut fit),
            WarpregStatus::InvalidArgument
        );
        assert_eq!(
            warpreg_fit_run(dataset, 5, 6, 5, 20, 0.75, 2, 0, &mut fit),
            WarpregStatus::Ok
        );
        let mut buf = [0.0f64; 2];
        assert_eq!(
            warpreg_fit_shape_coeffs(fit, buf.as_mut_ptr(), buf.len()),
            WarpregStatus::BufferTooSmall
        );
        let mut rate = 0.0;
        assert_eq!(
            warpreg_fit_accept_rate(fit, 99, &mut rate),
            WarpregStatus::NotFound
        );
        assert!(warpreg_fit_curve_id(fit, 99).is_null());
        warpreg_fit_free(fit);
        warpreg_dataset_free(dataset);
        warpreg_fit_free(ptr::null_mut());
        warpreg_dataset_free(ptr::null_mut());
        warpreg_string_free(ptr::null_mut());
    }
}
