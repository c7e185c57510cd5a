//! C ABI for the occupancy autoencoder.
//!
//! Conventions: every fallible function returns an `int32_t` status — 0 on
//! success, otherwise the same codes the CLI uses as exit codes (2 config,
//! 3 data, 4 numeric, 5 I/O) or -1 for a null argument. On failure a
//! thread-local message is set; fetch it with `omae_last_error`. Handles
//! are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

use omae_core::checkpoint::Checkpoint;
use omae_core::grid::GridConfig;
use omae_core::mask::{apply_mask, plan_mask, MaskConfig};
use omae_core::metrics::{score, DEFAULT_TAU};
use omae_core::model::forward_model;
use omae_core::points::read_points;
use omae_core::scene::{generate_scene, SceneSpec};
use omae_core::voxel::voxelize;
use omae_core::Error;

pub const OMAE_OK: i32 = 0;
pub const OMAE_ERR_NULL: i32 = -1;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(e: Error) -> i32 {
    let code = e.exit_code();
    set_error(&e.to_string());
    code
}

fn fail_null(what: &str) -> i32 {
    set_error(&format!("null pointer: {what}"));
    OMAE_ERR_NULL
}

/// Message of the most recent failure on this thread. Valid until the
/// next failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn omae_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn path_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a Path, i32> {
    if ptr.is_null() {
        return Err(fail_null(what));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error(&format!("{what} is not valid UTF-8"));
            Err(2)
        }
    }
}

/// Opaque trained-model handle (schedule + weights from a checkpoint).
pub struct OmaeModel {
    ckpt: Checkpoint,
    grid: GridConfig,
}

/// Load a full training checkpoint. The reconstruction grid uses the
/// checkpoint's dimensions with 0.5 m voxels centered on the sensor in XY
/// (the desk-scale layout). Returns 0 and writes the handle to `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omae_model_load(path: *const c_char, out: *mut *mut OmaeModel) -> i32 {
    if out.is_null() {
        return fail_null("out");
    }
    *out = std::ptr::null_mut();
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(c) => return c,
    };
    match Checkpoint::load(path) {
        Ok(ckpt) => {
            let dims = ckpt.schedule.grid_dims;
            let vs = 0.5;
            let grid = GridConfig {
                min_corner: [
                    -(dims[0] as f64) * vs / 2.0,
                    -(dims[1] as f64) * vs / 2.0,
                    -2.0,
                ],
                voxel_size: [vs; 3],
                dims,
                band_distance: omae_core::grid::BandDistance::Xy,
            };
            *out = Box::into_raw(Box::new(OmaeModel { ckpt, grid }));
            OMAE_OK
        }
        Err(e) => fail(e),
    }
}

/// Release a model handle. A null handle is a no-op.
///
/// # Safety
/// `model` must come from `omae_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn omae_model_free(model: *mut OmaeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Grid dimensions (W, H, D) of a loaded model.
///
/// # Safety
/// `dims` must point to at least 3 writable u32 values.
#[no_mangle]
pub unsafe extern "C" fn omae_model_grid_dims(model: *const OmaeModel, dims: *mut u32) -> i32 {
    if model.is_null() {
        return fail_null("model");
    }
    if dims.is_null() {
        return fail_null("dims");
    }
    let m = &*model;
    for a in 0..3 {
        *dims.add(a) = m.ckpt.schedule.grid_dims[a] as u32;
    }
    OMAE_OK
}

/// Generate one synthetic scene and write it as a point file
/// (little-endian x, y, z, intensity f32 records).
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn omae_scene_write(seed: u64, num_rays: u32, path: *const c_char) -> i32 {
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(c) => return c,
    };
    let spec = SceneSpec { seed, num_rays: num_rays as usize, ..SceneSpec::default() };
    let res = generate_scene(&spec)
        .and_then(|cloud| omae_core::points::write_points(&cloud, path));
    match res {
        Ok(()) => OMAE_OK,
        Err(e) => fail(e),
    }
}

/// Mask a scene with the default range-aware ratios under `mask_seed`,
/// reconstruct it with the model, and write the hidden-region occupancy
/// IoU (masked occupied voxels plus all free voxels) at threshold 0.5
/// to `masked_iou`.
///
/// # Safety
/// `model` from `omae_model_load`; `scene_path` NUL-terminated;
/// `masked_iou` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn omae_model_score(
    model: *const OmaeModel,
    scene_path: *const c_char,
    mask_seed: u64,
    masked_iou: *mut f64,
) -> i32 {
    if model.is_null() {
        return fail_null("model");
    }
    if masked_iou.is_null() {
        return fail_null("masked_iou");
    }
    let path = match path_arg(scene_path, "scene_path") {
        Ok(p) => p,
        Err(c) => return c,
    };
    let m = &*model;
    let sensor = [0.0, 0.0, 1.6];
    let run = || -> omae_core::Result<f64> {
        let cloud = read_points(path)?;
        let (tensor, target) = voxelize(&cloud, &m.grid)?;
        let mask_cfg = MaskConfig { seed: mask_seed, ..MaskConfig::default() };
        let plan = plan_mask(&target, &m.grid, sensor, &mask_cfg)?;
        let visible = apply_mask(&tensor, &plan)?;
        let trace = forward_model(&visible, &m.ckpt.params, &m.ckpt.schedule)?;
        let report = score(
            &trace.probs,
            &target,
            &plan,
            &m.grid,
            sensor,
            mask_cfg.band_edges,
            DEFAULT_TAU,
        );
        Ok(report.hidden.iou())
    };
    match run() {
        Ok(iou) => {
            *masked_iou = iou;
            OMAE_OK
        }
        Err(e) => fail(e),
    }
}
