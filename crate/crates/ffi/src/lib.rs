//! C interface to `histreg`.
//!
//! Objects are opaque handles created by `hr_*_new`/`hr_*_load`/`hr_register`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`HrStatus`]; on failure [`hr_last_error`] describes the problem. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use histreg::pipeline::{self, PipelineConfig, RegistrationResult};
use histreg::pyramid::load_image;
use histreg::{Error, Image, Transform, Vec2};

/// Status code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HrStatus {
    Ok = 0,
    /// A null pointer, bad size or malformed string was passed.
    InvalidArgument = 1,
    /// Unreadable file, bad image or invalid configuration.
    InputError = 2,
    /// A registration stage made no progress.
    RegistrationFailed = 3,
    /// A bug in the library; the message has details.
    InternalError = 4,
}

/// Gray image with physical pixel spacing.
pub struct HrImage(Image);

/// Outcome of a full registration.
pub struct HrResult(RegistrationResult);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: HrStatus, msg: impl Into<String>) -> HrStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> HrStatus {
    match e {
        Error::StageFailed { .. } => HrStatus::RegistrationFailed,
        _ => HrStatus::InputError,
    }
}

/// Runs `f`, turning panics into [`HrStatus::InternalError`].
fn guard(f: impl FnOnce() -> HrStatus) -> HrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let what = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(HrStatus::InternalError, format!("internal error: {what}"))
        }
    }
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, HrStatus> {
    if s.is_null() {
        return Err(fail(HrStatus::InvalidArgument, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(HrStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(HrStatus::InvalidArgument, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn hr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `width * height` row-major intensities into a new image.
///
/// # Safety
/// `data` must point to `width * height` readable doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn hr_image_new(
    width: usize,
    height: usize,
    spacing: f64,
    data: *const f64,
    out: *mut *mut HrImage,
) -> HrStatus {
    guard(|| {
        non_null!(data, out);
        let Some(n) = width.checked_mul(height) else {
            return fail(HrStatus::InvalidArgument, "image size overflows");
        };
        let values = std::slice::from_raw_parts(data, n).to_vec();
        match Image::new(width, height, spacing, values) {
            Ok(img) => {
                *out = Box::into_raw(Box::new(HrImage(img)));
                HrStatus::Ok
            }
            Err(e) => fail(HrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Loads a PNG or TIFF slide, converted to gray and inverted so the white
/// background becomes 0.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn hr_image_load(path: *const c_char, spacing: f64, out: *mut *mut HrImage) -> HrStatus {
    guard(|| {
        non_null!(out);
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_image(Path::new(path), spacing) {
            Ok(img) => {
                *out = Box::into_raw(Box::new(HrImage(img)));
                HrStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `img` must be null or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn hr_image_free(img: *mut HrImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// # Safety
/// `img` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_image_size(img: *const HrImage, width: *mut usize, height: *mut usize) -> HrStatus {
    guard(|| {
        non_null!(img, width, height);
        *width = (*img).0.width();
        *height = (*img).0.height();
        HrStatus::Ok
    })
}

/// Registers `template` onto `reference` with all three stages.
/// `config_json` may be null for the defaults; otherwise it holds a JSON
/// object with any subset of the pipeline settings.
///
/// # Safety
/// Both images must be live handles, `config_json` null or NUL-terminated,
/// and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn hr_register(
    reference: *const HrImage,
    template: *const HrImage,
    config_json: *const c_char,
    out: *mut *mut HrResult,
) -> HrStatus {
    guard(|| {
        non_null!(reference, template, out);
        let cfg: PipelineConfig = if config_json.is_null() {
            PipelineConfig::default()
        } else {
            let text = match c_str(config_json, "config_json") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => return fail(HrStatus::InputError, format!("configuration: {e}")),
            }
        };
        match pipeline::register_images((*reference).0.clone(), (*template).0.clone(), &cfg) {
            Ok(res) => {
                *out = Box::into_raw(Box::new(HrResult(res)));
                HrStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `res` must be null or a handle from this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn hr_result_free(res: *mut HrResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Rigid parameters `[phi, t1, t2]`.
///
/// # Safety
/// `res` must be a live handle and `out` must have room for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn hr_result_rigid(res: *const HrResult, out: *mut f64) -> HrStatus {
    guard(|| {
        non_null!(res, out);
        ptr::copy_nonoverlapping((*res).0.rigid.to_vec().as_ptr(), out, 3);
        HrStatus::Ok
    })
}

/// Affine parameters `[a11, a12, a21, a22, b1, b2]`.
///
/// # Safety
/// `res` must be a live handle and `out` must have room for 6 doubles.
#[no_mangle]
pub unsafe extern "C" fn hr_result_affine(res: *const HrResult, out: *mut f64) -> HrStatus {
    guard(|| {
        non_null!(res, out);
        ptr::copy_nonoverlapping((*res).0.affine.to_vec().as_ptr(), out, 6);
        HrStatus::Ok
    })
}

/// Control grid size: `m1` nodes per row, `m2` rows.
///
/// # Safety
/// `res` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_result_grid_size(res: *const HrResult, m1: *mut usize, m2: *mut usize) -> HrStatus {
    guard(|| {
        non_null!(res, m1, m2);
        *m1 = (*res).0.deformable.m1();
        *m2 = (*res).0.deformable.m2();
        HrStatus::Ok
    })
}

/// Copies the row-major node displacements into `u1` and `u2`, each of
/// length `m1 * m2`.
///
/// # Safety
/// `res` must be a live handle and both buffers must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hr_result_grid_displacements(
    res: *const HrResult,
    u1: *mut f64,
    u2: *mut f64,
    len: usize,
) -> HrStatus {
    guard(|| {
        non_null!(res, u1, u2);
        let g = &(*res).0.deformable;
        if len != g.m1() * g.m2() {
            return fail(
                HrStatus::InvalidArgument,
                format!("buffer length {len} does not match {} nodes", g.m1() * g.m2()),
            );
        }
        ptr::copy_nonoverlapping(g.u1().as_ptr(), u1, len);
        ptr::copy_nonoverlapping(g.u2().as_ptr(), u2, len);
        HrStatus::Ok
    })
}

/// Maps a reference point through the final transform.
///
/// # Safety
/// `res` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn hr_result_map_point(
    res: *const HrResult,
    x: f64,
    y: f64,
    out_x: *mut f64,
    out_y: *mut f64,
) -> HrStatus {
    guard(|| {
        non_null!(res, out_x, out_y);
        let y_map = Transform::Displacement((*res).0.deformable.clone());
        match y_map.try_apply(Vec2::new(x, y)) {
            Ok(p) => {
                *out_x = p.x;
                *out_y = p.y;
                HrStatus::Ok
            }
            Err(e) => fail(HrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Writes the deformation field in the library's binary grid format.
///
/// # Safety
/// `res` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hr_result_save_deformation(res: *const HrResult, path: *const c_char) -> HrStatus {
    guard(|| {
        non_null!(res);
        let path = match c_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match (*res).0.deformable.save(Path::new(path)) {
            Ok(()) => HrStatus::Ok,
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}
