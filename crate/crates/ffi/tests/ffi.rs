use std::ffi::{CStr, CString};
use std::ptr;

use rpdiff::network::{checkpoint, HeadKind, Model, ModelConfig};
use rpdiff_ffi::*;

fn tiny(head: HeadKind) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        encoder_blocks: 1,
        decoder_blocks: 1,
        object_tokens: 16,
        scene_tokens: 32,
        head,
        ..ModelConfig::default()
    }
}

fn save(dir: &std::path::Path, head: HeadKind) -> CString {
    let model = Model::<f32>::new(&tiny(head)).unwrap();
    checkpoint::save(dir, &model, serde_json::Value::Null).unwrap();
    CString::new(dir.to_str().unwrap()).unwrap()
}

fn grid(n: usize, scale: f64, offset: f64) -> Vec<f64> {
    (0..n)
        .flat_map(|i| {
            let f = i as f64;
            [offset + scale * (f * 0.37).sin(), scale * (f * 0.91).cos(), scale * (f * 0.13).sin()]
        })
        .collect()
}

#[test]
fn refine_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let den_path = save(&dir.path().join("den"), HeadKind::Pose);
    let cls_path = save(&dir.path().join("cls"), HeadKind::Score);
    unsafe {
        let mut den = ptr::null_mut();
        let mut cls = ptr::null_mut();
        assert_eq!(rpd_model_load(den_path.as_ptr(), &mut den), RpdStatus::Ok);
        assert_eq!(rpd_model_load(cls_path.as_ptr(), &mut cls), RpdStatus::Ok);
        assert_eq!(rpd_model_is_denoiser(den), 1);
        assert_eq!(rpd_model_is_denoiser(cls), 0);
        let mut count = 0;
        assert_eq!(rpd_model_param_count(den, &mut count), RpdStatus::Ok);
        assert!(count > 0);

        let object = grid(40, 0.05, 0.0);
        let scene = grid(200, 0.5, 1.0);
        let params = RpdRefineParams {
            runs: 3,
            iterations: 6,
            ..rpd_refine_params_default()
        };
        let mut res = ptr::null_mut();
        let st = rpd_refine(den, cls, object.as_ptr(), 40, scene.as_ptr(), 200, &params, &mut res);
        assert_eq!(st, RpdStatus::Ok);
        assert_eq!(rpd_result_run_count(res), 3);
        assert!(rpd_result_best_index(res) < 3);
        let mut m = [0.0; 16];
        assert_eq!(rpd_result_pose(res, 0, m.as_mut_ptr()), RpdStatus::Ok);
        assert_eq!(&m[12..], &[0.0, 0.0, 0.0, 1.0]);
        let col0: f64 = (0..3).map(|i| m[4 * i] * m[4 * i]).sum();
        assert!((col0 - 1.0).abs() < 1e-9);
        assert!(rpd_result_score(res, 0).is_finite());
        assert_eq!(rpd_result_pose(res, 9, m.as_mut_ptr()), RpdStatus::InvalidArgument);
        rpd_result_free(res);

        // swapped roles are rejected
        let st = rpd_refine(cls, ptr::null(), object.as_ptr(), 40, scene.as_ptr(), 200, &params, &mut res);
        assert_eq!(st, RpdStatus::InvalidArgument);
        rpd_model_free(den);
        rpd_model_free(cls);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(rpd_model_load(ptr::null(), &mut m), RpdStatus::NullArgument);
        let missing = CString::new("/nonexistent/checkpoint").unwrap();
        assert_eq!(rpd_model_load(missing.as_ptr(), &mut m), RpdStatus::Io);
        let msg = CStr::from_ptr(rpd_last_error()).to_str().unwrap();
        assert!(!msg.is_empty());
        assert!(m.is_null());
        rpd_model_free(ptr::null_mut());
        rpd_result_free(ptr::null_mut());
        assert!(rpd_result_score(ptr::null(), 0).is_nan());
    }
    let v = unsafe { CStr::from_ptr(rpd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/include/rpdiff.h");
    let header = std::fs::read_to_string(path).unwrap();
    for f in [
        "rpd_model_load",
        "rpd_model_free",
        "rpd_refine",
        "rpd_result_pose",
        "rpd_result_free",
        "rpd_last_error",
        "RPD_STATUS_NUMERIC",
    ] {
        assert!(header.contains(f), "{f}");
    }
    // the header must be valid C when a compiler is around
    if let Ok(out) = std::process::Command::new("cc").args(["-fsyntax-only", "-x", "c", path]).output() {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
