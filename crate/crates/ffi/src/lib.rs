//! C ABI over the refinement pipeline.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free`. Every fallible call returns an [`RpdStatus`] and,
//! on failure, leaves a message retrievable with [`rpd_last_error`] on the
//! same thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rpdiff::cloud::{CloudRole, PointCloud};
use rpdiff::geometry::{RigidTransform, Vec3};
use rpdiff::network::checkpoint;
use rpdiff::network::{HeadKind, Model};
use rpdiff::noising::NoisingConfig;
use rpdiff::refine::{refine, RefineConfig, RefineOutput, Scorer, Selection};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RpdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    Panic = 5,
}

/// Loaded network (de-noiser or classifier).
pub struct RpdModel {
    model: Model<f32>,
}

/// Result of one refinement call.
pub struct RpdResult {
    output: RefineOutput,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RpdRefineParams {
    /// Parallel runs K.
    pub runs: usize,
    /// Iterations I.
    pub iterations: usize,
    /// Timestep schedule bias A.
    pub schedule_bias: u32,
    /// Non-zero to enable annealed exploration noise.
    pub noise_enabled: u8,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn guard<F: FnOnce() -> Result<(), (RpdStatus, String)>>(f: F) -> RpdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RpdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RpdStatus::Panic
        }
    }
}

fn null(what: &str) -> (RpdStatus, String) {
    (RpdStatus::NullArgument, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rpd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rpd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn rpd_refine_params_default() -> RpdRefineParams {
    let d = RefineConfig::default();
    RpdRefineParams {
        runs: d.runs,
        iterations: d.iterations,
        schedule_bias: d.schedule_bias,
        noise_enabled: d.noise_enabled as u8,
        seed: d.seed,
    }
}

/// Loads a checkpoint directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rpd_model_load(dir: *const c_char, out: *mut *mut RpdModel) -> RpdStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("dir"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dir = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| (RpdStatus::InvalidArgument, "dir is not UTF-8".to_string()))?;
        let (model, _) = checkpoint::load(Path::new(dir)).map_err(|e| (RpdStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(RpdModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`rpd_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rpd_model_free(model: *mut RpdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of scalar parameters.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpd_model_param_count(model: *const RpdModel, out: *mut usize) -> RpdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.model.param_count();
        Ok(())
    })
}

/// 1 for a pose de-noiser, 0 for a success classifier.
///
/// # Safety
/// `model` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpd_model_is_denoiser(model: *const RpdModel) -> u8 {
    model.as_ref().is_some_and(|m| m.model.config().head == HeadKind::Pose) as u8
}

unsafe fn cloud(xyz: *const f64, n: usize, role: CloudRole, what: &str) -> Result<PointCloud, (RpdStatus, String)> {
    if xyz.is_null() {
        return Err(null(what));
    }
    let raw = std::slice::from_raw_parts(xyz, n.checked_mul(3).ok_or_else(|| (RpdStatus::InvalidArgument, format!("{what} is too long")))?);
    let pts = raw.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    PointCloud::new(pts, role).map_err(|e| (RpdStatus::InvalidArgument, format!("{what}: {e}")))
}

/// Refines `runs` random initial poses of the object against the scene.
///
/// Clouds are `n × 3` row-major doubles in metres. `classifier` may be null,
/// in which case the output is picked uniformly at random.
///
/// # Safety
/// All non-null pointers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn rpd_refine(
    denoiser: *const RpdModel,
    classifier: *const RpdModel,
    object_xyz: *const f64,
    object_len: usize,
    scene_xyz: *const f64,
    scene_len: usize,
    params: *const RpdRefineParams,
    out: *mut *mut RpdResult,
) -> RpdStatus {
    guard(|| {
        let d = denoiser.as_ref().ok_or_else(|| null("denoiser"))?;
        let p = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if d.model.config().head != HeadKind::Pose {
            return Err((RpdStatus::InvalidArgument, "denoiser is a classifier checkpoint".into()));
        }
        let c = classifier.as_ref();
        if c.is_some_and(|c| c.model.config().head != HeadKind::Score) {
            return Err((RpdStatus::InvalidArgument, "classifier is a de-noiser checkpoint".into()));
        }
        let object = cloud(object_xyz, object_len, CloudRole::Object, "object")?;
        let scene = cloud(scene_xyz, scene_len, CloudRole::Scene, "scene")?;
        let cfg = RefineConfig {
            runs: p.runs,
            iterations: p.iterations,
            schedule_bias: p.schedule_bias,
            noise_enabled: p.noise_enabled != 0,
            seed: p.seed,
            selection: if c.is_some() { Selection::ClassifierArgmax } else { Selection::Uniform },
            ..RefineConfig::default()
        };
        let scorer = c.map(|c| &c.model as &dyn Scorer);
        let tokens = d.model.config().object_tokens;
        let output = refine(&object, &scene, &d.model, scorer, tokens, &cfg, &NoisingConfig::default())
            .map_err(|e| (RpdStatus::InvalidArgument, e.to_string()))?;
        if output.runs.iter().any(|r| !r.final_pose.is_finite()) {
            return Err((RpdStatus::Numeric, "non-finite pose".into()));
        }
        *out = Box::into_raw(Box::new(RpdResult { output }));
        Ok(())
    })
}

/// # Safety
/// `result` must come from [`rpd_refine`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rpd_result_free(result: *mut RpdResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// # Safety
/// `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpd_result_run_count(result: *const RpdResult) -> usize {
    result.as_ref().map_or(0, |r| r.output.runs.len())
}

/// # Safety
/// `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpd_result_best_index(result: *const RpdResult) -> usize {
    result.as_ref().map_or(0, |r| r.output.best_index)
}

fn write_pose(t: &RigidTransform, out: &mut [f64; 16]) {
    let r = t.rotation.matrix();
    for i in 0..3 {
        for j in 0..3 {
            out[4 * i + j] = r[(i, j)];
        }
        out[4 * i + 3] = t.translation[i];
    }
    out[12..].copy_from_slice(&[0.0, 0.0, 0.0, 1.0]);
}

/// Final pose of `run` as a row-major 4×4 homogeneous matrix mapping the
/// object cloud as given to its placed position.
///
/// # Safety
/// `result` must be valid and `out` point to 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn rpd_result_pose(result: *const RpdResult, run: usize, out: *mut f64) -> RpdStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let run = r
            .output
            .runs
            .get(run)
            .ok_or_else(|| (RpdStatus::InvalidArgument, format!("run {run} out of range")))?;
        write_pose(&run.final_pose, &mut *(out as *mut [f64; 16]));
        Ok(())
    })
}

/// Classifier score of `run`; NaN when no classifier was given.
///
/// # Safety
/// `result` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rpd_result_score(result: *const RpdResult, run: usize) -> f64 {
    result
        .as_ref()
        .and_then(|r| r.output.runs.get(run))
        .and_then(|r| r.score)
        .unwrap_or(f64::NAN)
}
