use std::ffi::{CStr, CString};
use std::ptr;

use fedfg_ffi::*;

fn last_error() -> String {
    let p = fedfg_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn preset_config(name: &str) -> *mut FedfgConfig {
    let name = CString::new(name).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { fedfg_config_from_preset(name.as_ptr(), &mut cfg) }, FedfgStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

#[test]
fn hellinger_matches_closed_form() {
    let p = [0.5, 0.5];
    let q = [1.0, 0.0];
    let mut out = f64::NAN;
    let status = unsafe { fedfg_hellinger(p.as_ptr(), q.as_ptr(), 2, &mut out) };
    assert_eq!(status, FedfgStatus::Ok);
    assert!((out - (1.0 - 0.5f64.sqrt()).sqrt()).abs() < 1e-15);
    assert!(fedfg_last_error().is_null());
}

#[test]
fn hellinger_rejects_negative_mass() {
    let p = [1.5, -0.5];
    let q = [0.5, 0.5];
    let mut out = 0.0;
    let status = unsafe { fedfg_hellinger(p.as_ptr(), q.as_ptr(), 2, &mut out) };
    assert_eq!(status, FedfgStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

#[test]
fn hampel_fixture_through_the_abi() {
    let o = [0.1, 0.11, 0.12, 0.9];
    let (mut m, mut mad, mut tau) = (0.0, 0.0, 0.0);
    let status = unsafe { fedfg_hampel_threshold(o.as_ptr(), 4, 3.0, 0.0, &mut m, &mut mad, &mut tau) };
    assert_eq!(status, FedfgStatus::Ok);
    assert!((m - 0.115).abs() < 1e-15);
    assert!((mad - 0.01).abs() < 1e-15);
    assert!((tau - 0.159478).abs() < 1e-12);
    let status = unsafe { fedfg_hampel_threshold(o.as_ptr(), 4, 3.0, 0.0, ptr::null_mut(), ptr::null_mut(), &mut tau) };
    assert_eq!(status, FedfgStatus::Ok);
}

#[test]
fn null_handles_are_reported() {
    let mut out = 0usize;
    assert_eq!(unsafe { fedfg_run_rounds(ptr::null(), &mut out) }, FedfgStatus::NullPointer);
    assert!(last_error().contains("null"));
    assert_eq!(unsafe { fedfg_config_set_seed(ptr::null_mut(), 1) }, FedfgStatus::NullPointer);
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { fedfg_config_from_preset(ptr::null(), &mut cfg) }, FedfgStatus::NullPointer);
    assert!(cfg.is_null());
    assert_eq!(unsafe { fedfg_hampel_threshold(ptr::null(), 3, 3.0, 0.0, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, FedfgStatus::NullPointer);
    unsafe {
        fedfg_config_free(ptr::null_mut());
        fedfg_run_free(ptr::null_mut());
        fedfg_string_free(ptr::null_mut());
    }
}

#[test]
fn config_errors_map_to_codes() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new("sf99-iid").unwrap();
    assert_eq!(unsafe { fedfg_config_from_preset(bad.as_ptr(), &mut cfg) }, FedfgStatus::UnknownPreset);
    assert!(last_error().contains("sf99-iid"));

    let toml = CString::new("clients = 10\nbogus = 1\n").unwrap();
    assert_eq!(unsafe { fedfg_config_from_toml(toml.as_ptr(), &mut cfg) }, FedfgStatus::InvalidConfig);
    assert!(last_error().contains("bogus"));

    let cfg = preset_config("clean-iid");
    let name = CString::new("krum").unwrap();
    assert_eq!(unsafe { fedfg_config_set_aggregator(cfg, name.as_ptr()) }, FedfgStatus::InvalidConfig);
    let bytes = [0xffu8, 0];
    assert_eq!(unsafe { fedfg_config_set_aggregator(cfg, bytes.as_ptr().cast()) }, FedfgStatus::InvalidUtf8);
    unsafe { fedfg_config_free(cfg) };
}

#[test]
fn toml_round_trip() {
    let cfg = preset_config("mpaf10-dir02");
    let agg = CString::new("trimmed-mean").unwrap();
    unsafe {
        assert_eq!(fedfg_config_set_seed(cfg, 42), FedfgStatus::Ok);
        assert_eq!(fedfg_config_set_aggregator(cfg, agg.as_ptr()), FedfgStatus::Ok);
    }
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { fedfg_config_to_toml(cfg, &mut text) }, FedfgStatus::Ok);
    let rendered = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_string();
    assert!(rendered.contains("seed = 42"));
    assert!(rendered.contains("trimmed_mean"));

    let mut again = ptr::null_mut();
    assert_eq!(unsafe { fedfg_config_from_toml(text, &mut again) }, FedfgStatus::Ok);
    let mut text2 = ptr::null_mut();
    assert_eq!(unsafe { fedfg_config_to_toml(again, &mut text2) }, FedfgStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(text2) }.to_str().unwrap(), rendered);
    unsafe {
        fedfg_string_free(text);
        fedfg_string_free(text2);
        fedfg_config_free(cfg);
        fedfg_config_free(again);
    }
}

#[test]
fn short_run_exposes_records() {
    let cfg = preset_config("sf30-iid");
    unsafe {
        assert_eq!(fedfg_config_set_rounds(cfg, 2), FedfgStatus::Ok);
        assert_eq!(fedfg_config_set_threads(cfg, 1), FedfgStatus::Ok);
    }
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { fedfg_run(cfg, &mut run) }, FedfgStatus::Ok);

    let (mut rounds, mut clients) = (0, 0);
    unsafe {
        assert_eq!(fedfg_run_rounds(run, &mut rounds), FedfgStatus::Ok);
        assert_eq!(fedfg_run_clients(run, &mut clients), FedfgStatus::Ok);
    }
    assert_eq!((rounds, clients), (2, 10));

    let mut acc = f64::NAN;
    assert_eq!(unsafe { fedfg_run_accuracy(run, 1, &mut acc) }, FedfgStatus::Ok);
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(unsafe { fedfg_run_accuracy(run, 2, &mut acc) }, FedfgStatus::OutOfRange);

    let mut tau = f64::NAN;
    assert_eq!(unsafe { fedfg_run_tau(run, 0, &mut tau) }, FedfgStatus::Ok);
    assert!(tau.is_finite());

    let mut o = vec![f64::NAN; clients];
    let mut s = vec![f64::NAN; clients];
    let mut flagged = vec![9u8; clients];
    unsafe {
        assert_eq!(fedfg_run_outlier_scores(run, 0, o.as_mut_ptr(), clients - 1), FedfgStatus::BufferTooSmall);
        assert_eq!(fedfg_run_outlier_scores(run, 0, o.as_mut_ptr(), clients), FedfgStatus::Ok);
        assert_eq!(fedfg_run_accuracy_scores(run, 0, s.as_mut_ptr(), clients), FedfgStatus::Ok);
        assert_eq!(fedfg_run_flagged(run, 0, flagged.as_mut_ptr(), clients), FedfgStatus::Ok);
    }
    assert!(o.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(flagged.iter().all(|&f| f <= 1));

    let mut ids = [usize::MAX; 10];
    let mut count = 0;
    assert_eq!(unsafe { fedfg_run_malicious(run, ids.as_mut_ptr(), ids.len(), &mut count) }, FedfgStatus::Ok);
    assert_eq!(count, 3);
    assert!(ids[..count].iter().all(|&i| i < 10));
    assert_eq!(unsafe { fedfg_run_malicious(run, ids.as_mut_ptr(), 1, &mut count) }, FedfgStatus::BufferTooSmall);
    assert_eq!(count, 3);

    let mut seen = usize::MAX;
    assert_eq!(unsafe { fedfg_run_extractor_segments_seen(run, &mut seen) }, FedfgStatus::Ok);
    assert_eq!(seen, 0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fedfg_run_write_csv(run, c_path.as_ptr()) }, FedfgStatus::Ok);
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 3);

    let missing = CString::new(dir.path().join("no/such/dir/run.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { fedfg_run_write_csv(run, missing.as_ptr()) }, FedfgStatus::Io);

    unsafe {
        fedfg_run_free(run);
        fedfg_config_free(cfg);
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(fedfg_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
