use std::ffi::CStr;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use glr_cusum_ffi::*;

fn default_cfg() -> GlrDetectorConfig {
    let mut cfg = std::mem::MaybeUninit::uninit();
    assert_eq!(unsafe { glr_detector_config_default(cfg.as_mut_ptr()) }, GlrStatus::Ok);
    unsafe { cfg.assume_init() }
}

fn last_error() -> String {
    let p = glr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn detector_lifecycle_and_statistic() {
    let cfg = GlrDetectorConfig {
        delta_n: 1.0 / 6.0,
        w_n: 6,
        ..default_cfg()
    };
    let mut det = ptr::null_mut();
    unsafe {
        assert_eq!(glr_detector_new(&cfg, &mut det), GlrStatus::Ok);
        let mut fired = true;
        let mut alarm = GlrAlarm::default();
        for _ in 0..6 {
            assert_eq!(glr_detector_push(det, 1.0, &mut fired, &mut alarm), GlrStatus::Ok);
        }
        // Sum 6 over a span of one day: statistic 6 > 4.
        assert!(fired);
        assert_eq!((alarm.l, alarm.k_star), (6, 0));
        let mut s = 0.0;
        assert_eq!(glr_detector_stat(det, 0, 6, &mut s), GlrStatus::Ok);
        assert!((s - 6.0).abs() < 1e-12);
        let mut idx = 0;
        assert_eq!(glr_detector_index(det, &mut idx), GlrStatus::Ok);
        assert_eq!(idx, 6);
        assert_eq!(glr_detector_stat(det, 6, 6, &mut s), GlrStatus::WindowOutOfRange);
        assert!(last_error().contains("window"));
        assert_eq!(glr_detector_set_zeta(det, -1.0), GlrStatus::InvalidConfig);
        glr_detector_free(det);
        glr_detector_free(ptr::null_mut());
    }
}

#[test]
fn step_applies_standardization_and_truncation() {
    let cfg = GlrDetectorConfig {
        delta_n: 1.0 / 4.0,
        zeta: 1.0,
        ..default_cfg()
    };
    let mut det = ptr::null_mut();
    unsafe {
        assert_eq!(glr_detector_new(&cfg, &mut det), GlrStatus::Ok);
        let mut fired = false;
        // Cutoff is ζΔ^ϖ ≈ 0.507; a return of 0.9 is truncated to zero.
        assert_eq!(glr_detector_step(det, 0.9, 0.1, &mut fired, ptr::null_mut()), GlrStatus::Ok);
        let mut s = 1.0;
        assert_eq!(glr_detector_stat(det, 0, 1, &mut s), GlrStatus::Ok);
        assert_eq!(s, 0.0);
        assert_eq!(glr_detector_step(det, 0.1, 0.0, &mut fired, ptr::null_mut()), GlrStatus::InvalidData);
        assert_eq!(glr_detector_step(det, 0.1, 0.1, ptr::null_mut(), ptr::null_mut()), GlrStatus::NullPointer);
        glr_detector_free(det);
    }
}

#[test]
fn batch_helpers() {
    let n = 390;
    let mut prices = vec![0.0; n + 1];
    for i in 1..=n {
        prices[i] = prices[i - 1] + if i > 200 { 0.004 } else { 0.0 };
    }
    let vols = vec![0.01; n + 1];
    let cfg = default_cfg();
    let mut found = false;
    let mut alarm = GlrAlarm::default();
    unsafe {
        assert_eq!(
            glr_first_alarm(prices.as_ptr(), vols.as_ptr(), prices.len(), &cfg, &mut found, &mut alarm),
            GlrStatus::Ok
        );
        assert!(found);
        assert!(alarm.l > 200 && alarm.k_star >= 199);
        let mut zeta = 0.0;
        assert_eq!(glr_truncation_scale(vols.as_ptr(), vols.len(), &mut zeta), GlrStatus::Ok);
        assert!((zeta - 0.04).abs() < 1e-15);
        assert_eq!(glr_truncation_scale(ptr::null(), 0, &mut zeta), GlrStatus::InvalidData);
        assert_eq!(glr_truncation_scale(ptr::null(), 5, &mut zeta), GlrStatus::NullPointer);
    }
}

#[test]
fn theory_entry_points() {
    let (mut arl, mut lin, mut exp, mut d) = (0.0, 0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(glr_theory_arl(4.0, f64::INFINITY, GlrNuMode::Approx, &mut arl), GlrStatus::Ok);
        assert_eq!(glr_theory_fdr(4.0, f64::INFINITY, 390.0, GlrNuMode::Approx, &mut lin, &mut exp), GlrStatus::Ok);
        assert!((exp - (1.0 - (-390.0 / arl).exp())).abs() < 1e-12);
        assert!(lin >= exp);
        assert_eq!(glr_theory_d(f64::INFINITY, GlrNuMode::Approx, &mut d), GlrStatus::Ok);
        assert!(d > 0.0 && d < 1.0);
        assert_eq!(glr_theory_arl(-1.0, 1.0, GlrNuMode::Exact, &mut arl), GlrStatus::Domain);
        assert!(!last_error().is_empty());
    }
}

fn target_dir() -> Option<PathBuf> {
    // tests run from target/<profile>/deps
    std::env::current_exe().ok()?.parent()?.parent().map(Path::to_path_buf)
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/glr_cusum.h");
    assert!(header.exists(), "header is generated by the build script");
    let lib = match target_dir() {
        Some(d) if d.join("libglr_cusum_ffi.a").exists() => d.join("libglr_cusum_ffi.a"),
        _ => {
            println!("static library not found; skipping link check");
            return;
        }
    };
    if Command::new("cc").arg("--version").output().is_err() {
        println!("no C compiler; skipping");
        return;
    }
    let dir = tempfile_dir();
    let exe = dir.join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile/link failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "smoke exit {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(env!("CARGO_PKG_VERSION")));
    let _ = std::fs::remove_dir_all(&dir);
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("glr_cusum_ffi_{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
