//! C ABI for the patch-manifold reconstruction library.
//!
//! Conventions:
//! - every object is an opaque handle created and freed by this library;
//! - functions return [`MmqsStatus`]; on failure a message is available
//!   from [`mmqs_last_error_message`] (thread-local);
//! - strings are UTF-8, NUL-terminated; strings returned by the library
//!   must be released with [`mmqs_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use mmqs::config::{Task, TaskConfig};
use mmqs::image::Image;
use mmqs::observe::ObservationOp;
use mmqs::task::{build_solver_with, synthesize_degradation};

/// Result code of every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmqsStatus {
    MmqsOk = 0,
    /// A required pointer argument was NULL.
    MmqsNullArgument = 1,
    /// A value was malformed or out of range.
    MmqsInvalidArgument = 2,
    /// Image shapes do not agree.
    MmqsShapeMismatch = 3,
    /// File could not be read or written.
    MmqsIoError = 4,
    /// The optimization or another internal step failed.
    MmqsRuntimeError = 5,
}

/// Opaque image handle (grayscale or RGB, f64 samples in [0, 1]).
pub struct MmqsImage {
    inner: Image,
}

/// Opaque task configuration handle.
pub struct MmqsConfig {
    inner: TaskConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap());
}

fn status_of(err: &mmqs::Error) -> MmqsStatus {
    match err {
        mmqs::Error::ShapeMismatch { .. } => MmqsStatus::MmqsShapeMismatch,
        mmqs::Error::Io(_) | mmqs::Error::Image(_) => MmqsStatus::MmqsIoError,
        mmqs::Error::InvalidConfig(_) | mmqs::Error::InvalidGrid(_) => {
            MmqsStatus::MmqsInvalidArgument
        }
        _ => MmqsStatus::MmqsRuntimeError,
    }
}

fn guard(f: impl FnOnce() -> MmqsStatus) -> MmqsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            MmqsStatus::MmqsRuntimeError
        }
    }
}

/// # Safety
/// `ptr` must be NULL or a valid NUL-terminated UTF-8 string.
unsafe fn cstr<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok()
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mmqs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must have been returned by an mmqs function and not freed before.
#[no_mangle]
pub unsafe extern "C" fn mmqs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Create an image from a row-major, channel-interleaved sample buffer of
/// length `height * width * channels` (channels must be 1 or 3).
///
/// # Safety
/// `data` must point to at least `height * width * channels` doubles;
/// `out` must be a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn mmqs_image_create(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut MmqsImage,
) -> MmqsStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            set_error("mmqs_image_create: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        }
        let len = height * width * channels;
        let slice = std::slice::from_raw_parts(data, len);
        match Image::from_data(height, width, channels, slice.to_vec()) {
            Ok(img) => {
                *out = Box::into_raw(Box::new(MmqsImage { inner: img }));
                MmqsStatus::MmqsOk
            }
            Err(e) => {
                set_error(&e);
                status_of(&e)
            }
        }
    })
}

/// Load an 8-bit PNG or PGM/PPM file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmqs_image_load(
    path: *const c_char,
    out: *mut *mut MmqsImage,
) -> MmqsStatus {
    guard(|| {
        let (Some(path), false) = (cstr(path), out.is_null()) else {
            set_error("mmqs_image_load: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match Image::load(path) {
            Ok(img) => {
                *out = Box::into_raw(Box::new(MmqsImage { inner: img }));
                MmqsStatus::MmqsOk
            }
            Err(e) => {
                set_error(&e);
                status_of(&e)
            }
        }
    })
}

/// Write an image as 8-bit PNG or PGM/PPM (clamped to [0, 1]).
///
/// # Safety
/// `img` must be a live handle, `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mmqs_image_save(
    img: *const MmqsImage,
    path: *const c_char,
) -> MmqsStatus {
    guard(|| {
        let (Some(img), Some(path)) = (img.as_ref(), cstr(path)) else {
            set_error("mmqs_image_save: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match img.inner.save(path) {
            Ok(()) => MmqsStatus::MmqsOk,
            Err(e) => {
                set_error(&e);
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmqs_image_height(img: *const MmqsImage) -> usize {
    img.as_ref().map_or(0, |i| i.inner.height())
}

/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmqs_image_width(img: *const MmqsImage) -> usize {
    img.as_ref().map_or(0, |i| i.inner.width())
}

/// # Safety
/// `img` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmqs_image_channels(img: *const MmqsImage) -> usize {
    img.as_ref().map_or(0, |i| i.inner.channels())
}

/// Copy the samples into `buf` (length `height * width * channels`).
///
/// # Safety
/// `buf` must have room for `len` doubles; `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmqs_image_data(
    img: *const MmqsImage,
    buf: *mut f64,
    len: usize,
) -> MmqsStatus {
    guard(|| {
        let (Some(img), false) = (img.as_ref(), buf.is_null()) else {
            set_error("mmqs_image_data: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        if len != img.inner.len() {
            set_error(format!(
                "mmqs_image_data: buffer holds {len}, image has {}",
                img.inner.len()
            ));
            return MmqsStatus::MmqsShapeMismatch;
        }
        std::ptr::copy_nonoverlapping(img.inner.data().as_ptr(), buf, len);
        MmqsStatus::MmqsOk
    })
}

/// # Safety
/// `img` must be NULL or an owned handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mmqs_image_free(img: *mut MmqsImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Peak signal-to-noise ratio in dB (infinite for identical images).
///
/// # Safety
/// All pointers must be live handles / valid destinations.
#[no_mangle]
pub unsafe extern "C" fn mmqs_psnr(
    reference: *const MmqsImage,
    estimate: *const MmqsImage,
    out: *mut f64,
) -> MmqsStatus {
    guard(|| {
        let (Some(a), Some(b), false) = (reference.as_ref(), estimate.as_ref(), out.is_null())
        else {
            set_error("mmqs_psnr: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match mmqs::metrics::psnr(&a.inner, &b.inner) {
            Ok(v) => {
                *out = v;
                MmqsStatus::MmqsOk
            }
            Err(e) => {
                set_error(&e);
                status_of(&e)
            }
        }
    })
}

/// Mean SSIM over 8x8 sliding windows (color inputs use the channel mean).
///
/// # Safety
/// All pointers must be live handles / valid destinations.
#[no_mangle]
pub unsafe extern "C" fn mmqs_ssim(
    reference: *const MmqsImage,
    estimate: *const MmqsImage,
    out: *mut f64,
) -> MmqsStatus {
    guard(|| {
        let (Some(a), Some(b), false) = (reference.as_ref(), estimate.as_ref(), out.is_null())
        else {
            set_error("mmqs_ssim: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match mmqs::metrics::ssim(&a.inner, &b.inner) {
            Ok(v) => {
                *out = v;
                MmqsStatus::MmqsOk
            }
            Err(e) => {
                set_error(&e);
                status_of(&e)
            }
        }
    })
}

/// New configuration holding the preset for `task` (one of "inpaint",
/// "deblur", "sr", "denoise").
///
/// # Safety
/// `task` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmqs_config_new(
    task: *const c_char,
    out: *mut *mut MmqsConfig,
) -> MmqsStatus {
    guard(|| {
        let (Some(task), false) = (cstr(task), out.is_null()) else {
            set_error("mmqs_config_new: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match Task::parse(task) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(MmqsConfig {
                    inner: TaskConfig::preset(t),
                }));
                MmqsStatus::MmqsOk
            }
            Err(e) => {
                set_error(&e);
                MmqsStatus::MmqsInvalidArgument
            }
        }
    })
}

/// Parse a full config from the flat `key = value` text format.
///
/// # Safety
/// `text` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mmqs_config_parse(
    text: *const c_char,
    out: *mut *mut MmqsConfig,
) -> MmqsStatus {
    guard(|| {
        let (Some(text), false) = (cstr(text), out.is_null()) else {
            set_error("mmqs_config_parse: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match TaskConfig::parse(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(MmqsConfig { inner: cfg }));
                MmqsStatus::MmqsOk
            }
            Err(e) => {
                set_error(&e);
                MmqsStatus::MmqsInvalidArgument
            }
        }
    })
}

/// Override one config key (same keys as the text format).
///
/// # Safety
/// `cfg` must be a live handle; `key` and `value` valid strings.
#[no_mangle]
pub unsafe extern "C" fn mmqs_config_set(
    cfg: *mut MmqsConfig,
    key: *const c_char,
    value: *const c_char,
) -> MmqsStatus {
    guard(|| {
        let (Some(cfg), Some(key), Some(value)) = (cfg.as_mut(), cstr(key), cstr(value)) else {
            set_error("mmqs_config_set: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match cfg.inner.apply(key, value) {
            Ok(()) => MmqsStatus::MmqsOk,
            Err(e) => {
                set_error(&e);
                MmqsStatus::MmqsInvalidArgument
            }
        }
    })
}

/// Render the config in the flat text format. Free with
/// [`mmqs_string_free`]. Returns NULL on NULL input.
///
/// # Safety
/// `cfg` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmqs_config_serialize(cfg: *const MmqsConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(cfg) => CString::new(cfg.inner.serialize())
            .map(CString::into_raw)
            .unwrap_or(std::ptr::null_mut()),
        None => std::ptr::null_mut(),
    }
}

/// # Safety
/// `cfg` must be NULL or an owned handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mmqs_config_free(cfg: *mut MmqsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Synthesize a degraded observation from a clean reference according to
/// the config's task (seeded by the config seed). For inpainting
/// `mask_out` receives the generated mask when non-NULL.
///
/// # Safety
/// `cfg` and `reference` must be live handles; `observed_out` valid;
/// `mask_out` NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn mmqs_degrade(
    cfg: *const MmqsConfig,
    reference: *const MmqsImage,
    observed_out: *mut *mut MmqsImage,
    mask_out: *mut *mut MmqsImage,
) -> MmqsStatus {
    guard(|| {
        let (Some(cfg), Some(reference), false) =
            (cfg.as_ref(), reference.as_ref(), observed_out.is_null())
        else {
            set_error("mmqs_degrade: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match synthesize_degradation(&reference.inner, &cfg.inner) {
            Ok((observed, op)) => {
                *observed_out = Box::into_raw(Box::new(MmqsImage { inner: observed }));
                if !mask_out.is_null() {
                    *mask_out = match op {
                        ObservationOp::Mask { mask } => {
                            Box::into_raw(Box::new(MmqsImage { inner: mask }))
                        }
                        _ => std::ptr::null_mut(),
                    };
                }
                MmqsStatus::MmqsOk
            }
            Err(e) => {
                set_error(&e);
                status_of(&e)
            }
        }
    })
}

/// Run the full reconstruction in memory and return the restored image.
///
/// For the inpainting task `mask` is required (0 = missing); other tasks
/// ignore it. Paths inside the config are not touched; no files are
/// written.
///
/// # Safety
/// `cfg` and `observed` must be live handles; `mask` NULL or a live
/// handle; `out` a valid destination pointer.
#[no_mangle]
pub unsafe extern "C" fn mmqs_reconstruct(
    cfg: *const MmqsConfig,
    observed: *const MmqsImage,
    mask: *const MmqsImage,
    out: *mut *mut MmqsImage,
) -> MmqsStatus {
    guard(|| {
        let (Some(cfg), Some(observed), false) =
            (cfg.as_ref(), observed.as_ref(), out.is_null())
        else {
            set_error("mmqs_reconstruct: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        let op = match cfg.inner.task {
            Task::Denoise => ObservationOp::identity(),
            Task::Deblur => match ObservationOp::blur(cfg.inner.blur_width, cfg.inner.blur_std) {
                Ok(op) => op,
                Err(e) => {
                    set_error(&e);
                    return status_of(&e);
                }
            },
            Task::Sr => match ObservationOp::downsample(cfg.inner.sr_factor) {
                Ok(op) => op,
                Err(e) => {
                    set_error(&e);
                    return status_of(&e);
                }
            },
            Task::Inpaint => {
                let Some(mask) = mask.as_ref() else {
                    set_error("mmqs_reconstruct: inpainting requires a mask image");
                    return MmqsStatus::MmqsNullArgument;
                };
                match ObservationOp::mask(&mask.inner.to_luma()) {
                    Ok(op) => op,
                    Err(e) => {
                        set_error(&e);
                        return status_of(&e);
                    }
                }
            }
        };
        let solver = build_solver_with(&cfg.inner, observed.inner.clone(), op);
        let result = solver.and_then(|mut s| s.run(None));
        match result {
            Ok(img) => {
                *out = Box::into_raw(Box::new(MmqsImage { inner: img }));
                MmqsStatus::MmqsOk
            }
            Err(e) => {
                set_error(&e);
                status_of(&e)
            }
        }
    })
}

/// Run a configured task end to end through the filesystem, exactly like
/// the command-line front end (reads the config's input paths, writes all
/// artifacts into its out_dir).
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmqs_run_task(cfg: *const MmqsConfig) -> MmqsStatus {
    guard(|| {
        let Some(cfg) = cfg.as_ref() else {
            set_error("mmqs_run_task: NULL argument");
            return MmqsStatus::MmqsNullArgument;
        };
        match mmqs::task::run_task(&cfg.inner) {
            Ok(_) => MmqsStatus::MmqsOk,
            Err(e) => {
                set_error(&e);
                status_of(&e)
            }
        }
    })
}

