use std::ffi::{c_char, CStr, CString};
use std::ptr;

use ldpo_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ldpo_last_error_message()) }.to_string_lossy().into_owned()
}

fn take_string(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let text = unsafe { CStr::from_ptr(s) }.to_string_lossy().into_owned();
    unsafe { ldpo_string_free(s) };
    text
}

/// Three tight blobs of `per` points each in the plane.
fn blobs(per: usize) -> (Vec<f64>, Vec<usize>) {
    let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
    let mut data = Vec::new();
    let mut truth = Vec::new();
    for (c, &(x, y)) in centers.iter().enumerate() {
        for i in 0..per {
            let t = i as f64 / per as f64;
            data.extend([x + 0.5 * (6.0 * t).sin(), y + 0.5 * (11.0 * t).cos()]);
            truth.push(c);
        }
    }
    (data, truth)
}

#[test]
fn metrics_match_known_values() {
    let a = [0usize, 0, 1, 1];
    let b = [1usize, 1, 0, 0];
    let c = [0usize, 1, 0, 1];
    let (mut p, mut m, mut indep) = (0.0, 0.0, 1.0);
    unsafe {
        assert_eq!(ldpo_purity(a.as_ptr(), b.as_ptr(), 4, &mut p), LdpoStatus::Ok);
        assert_eq!(ldpo_nmi(a.as_ptr(), b.as_ptr(), 4, &mut m), LdpoStatus::Ok);
        assert_eq!(ldpo_nmi(a.as_ptr(), c.as_ptr(), 4, &mut indep), LdpoStatus::Ok);
    }
    assert_eq!(p, 1.0);
    assert!((m - 1.0).abs() < 1e-12);
    assert!(indep.abs() < 1e-12);
    assert_eq!(last_error(), "");
}

#[test]
fn failures_set_status_and_message() {
    let a = [0usize, 1];
    let mut out = 0.0;
    let status = unsafe { ldpo_purity(ptr::null(), a.as_ptr(), 2, &mut out) };
    assert_eq!(status, LdpoStatus::NullPointer);
    assert!(last_error().contains("null"));

    let status = unsafe { ldpo_purity(a.as_ptr(), a.as_ptr(), 0, &mut out) };
    assert_eq!(status, LdpoStatus::InvalidInput);
    assert!(!last_error().is_empty());

    let (data, _) = blobs(4);
    let mut labels = [0usize; 12];
    let status = unsafe { ldpo_kmeans(data.as_ptr(), 12, 2, 0, 1, 0, labels.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(status, LdpoStatus::InvalidInput);

    let bad = CString::new("max_iterations = \"many\"").unwrap();
    let mut session = ptr::null_mut();
    assert_eq!(unsafe { ldpo_session_new(bad.as_ptr(), &mut session) }, LdpoStatus::Config);
    assert!(session.is_null());
}

#[test]
fn kmeans_and_rim_recover_blobs() {
    let (data, truth) = blobs(20);
    let n = truth.len();
    let mut labels = vec![0usize; n];
    let mut cost = 0.0;
    let status = unsafe { ldpo_kmeans(data.as_ptr(), n, 2, 3, 5, 1, labels.as_mut_ptr(), &mut cost) };
    assert_eq!(status, LdpoStatus::Ok, "{}", last_error());
    assert!(cost > 0.0);
    let mut p = 0.0;
    unsafe { ldpo_purity(labels.as_ptr(), truth.as_ptr(), n, &mut p) };
    assert_eq!(p, 1.0);

    // over-segment, then let RIM prune
    let mut init = vec![0usize; n];
    unsafe { ldpo_kmeans(data.as_ptr(), n, 2, 8, 3, 2, init.as_mut_ptr(), ptr::null_mut()) };
    let mut refined = vec![0usize; n];
    let mut k = 0;
    let status = unsafe { ldpo_rim(data.as_ptr(), n, 2, init.as_ptr(), 1.0, refined.as_mut_ptr(), &mut k) };
    assert_eq!(status, LdpoStatus::Ok, "{}", last_error());
    assert!((1..=8).contains(&k));
    assert!(refined.iter().all(|&l| l < k));
}

#[test]
fn session_runs_and_reports() {
    let (data, truth) = blobs(30);
    let n = truth.len();
    let toml = CString::new(
        "max_iterations = 4\nseed = 3\n[clustering]\nmode = \"kmeans\"\nk = 3\nrestarts = 3\n[learner]\nhidden = 8\nepochs = 10\n",
    )
    .unwrap();
    let mut session = ptr::null_mut();
    unsafe {
        assert_eq!(ldpo_session_new(toml.as_ptr(), &mut session), LdpoStatus::Ok, "{}", last_error());

        let mut json = ptr::null_mut();
        assert_eq!(ldpo_session_reports_json(session, &mut json), LdpoStatus::NoModel);

        assert_eq!(ldpo_session_run_features(session, data.as_ptr(), n, 2), LdpoStatus::Ok, "{}", last_error());
        let (mut items, mut k, mut converged) = (0, 0, false);
        assert_eq!(ldpo_session_summary(session, &mut items, &mut k, &mut converged), LdpoStatus::Ok);
        assert_eq!(items, n);
        assert_eq!(k, 3);

        let mut short = vec![0usize; n - 1];
        assert_eq!(ldpo_session_labels(session, short.as_mut_ptr(), n - 1), LdpoStatus::BufferTooSmall);
        let mut labels = vec![0usize; n];
        assert_eq!(ldpo_session_labels(session, labels.as_mut_ptr(), n), LdpoStatus::Ok);
        let mut p = 0.0;
        ldpo_purity(labels.as_ptr(), truth.as_ptr(), n, &mut p);
        assert_eq!(p, 1.0);

        assert_eq!(ldpo_session_reports_json(session, &mut json), LdpoStatus::Ok);
        let reports: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
        assert!(!reports.as_array().unwrap().is_empty());
        assert_eq!(reports[0]["seed"], 3);

        let mut tree = ptr::null_mut();
        assert_eq!(ldpo_session_tree_json(session, &mut tree), LdpoStatus::Ok, "{}", last_error());
        let tree: serde_json::Value = serde_json::from_str(&take_string(tree)).unwrap();
        assert_eq!(tree["members"].as_array().unwrap().len(), 3);

        ldpo_session_free(session);
        ldpo_session_free(ptr::null_mut());
    }
}

#[test]
fn gmm_fisher_vector_has_unit_norm() {
    let d = 3;
    let descriptors: Vec<f64> = (0..60 * d).map(|i| ((i * 37 % 101) as f64 / 101.0) * 4.0 - 2.0).collect();
    let mut gmm = ptr::null_mut();
    unsafe {
        assert_eq!(ldpo_gmm_fit(descriptors.as_ptr(), 60, d, 2, 0, &mut gmm), LdpoStatus::Ok, "{}", last_error());
        let mut len = 0;
        ldpo_gmm_fv_len(gmm, &mut len);
        assert_eq!(len, 2 * 2 * d);

        let mut fv = vec![0.0; len];
        let grid = &descriptors[..4 * d];
        assert_eq!(ldpo_gmm_fisher_vector(gmm, grid.as_ptr(), 2, fv.as_mut_ptr(), len), LdpoStatus::Ok);
        let norm: f64 = fv.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(ldpo_gmm_fisher_vector(gmm, grid.as_ptr(), 2, fv.as_mut_ptr(), len - 1), LdpoStatus::BufferTooSmall);
        ldpo_gmm_free(gmm);
    }
}
