//! C ABI over `mcd-core`.
//!
//! Objects are opaque handles created by `mcd_*_load` / `mcd_*_from_*` /
//! pipeline calls and released with the matching `mcd_*_free`. Every
//! fallible call returns an [`McdStatus`]; on failure
//! [`mcd_last_error_message`] describes the error on the calling thread.
//! Panics never cross the boundary; they surface as `MCD_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mcd_core::baselines::{detect_threshold, BaselineConfig, ThresholdMethod};
use mcd_core::boxes::{CandidateBox, Detection};
use mcd_core::error::{ErrorClass, McdError};
use mcd_core::eval::seg_metrics;
use mcd_core::fof::{field_of_focus, FloodFillSegmenter, I2acpConfig};
use mcd_core::image::{BinaryMask, GrayImage};
use mcd_core::mirp::{propose, MirpConfig};
use mcd_core::pipeline::detect_mcd;
use mcd_core::san::{checkpoint, classify, NetworkParams};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Runtime = 5,
    Panic = 6,
}

/// 8-bit grayscale image.
pub struct McdImage(GrayImage);

/// Binary mask (anterior chamber or segmentation).
pub struct McdMask(BinaryMask);

/// Trained patch classifier.
pub struct McdModel(NetworkParams);

/// Boxes with scores, as produced by proposal, classification or detection.
pub struct McdBoxList(Vec<Detection>);

/// Half-open box `[x_tl, x_br) × [y_tl, y_br)` with a score.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McdBox {
    pub x_tl: i64,
    pub y_tl: i64,
    pub x_br: i64,
    pub y_br: i64,
    pub score: f64,
}

/// Candidate-proposal settings; start from [`mcd_mirp_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McdMirpParams {
    pub lambda: f64,
    pub s_min: usize,
    pub s_max: usize,
    pub box_w: usize,
    pub box_h: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum McdThresholdMethod {
    Otsu = 0,
    Isodata = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(McdStatus, String);

impl From<McdError> for Failure {
    fn from(e: McdError) -> Self {
        let status = match (&e, e.class()) {
            (McdError::Io { .. }, _) => McdStatus::Io,
            (_, ErrorClass::Usage) => McdStatus::InvalidArgument,
            (_, ErrorClass::Data) => McdStatus::Data,
            (_, ErrorClass::Runtime) => McdStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> McdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            McdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            McdStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(McdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(McdStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn clear<T>(out: *mut *mut T) {
    if !out.is_null() {
        *out = ptr::null_mut();
    }
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `mcd_*` call on this thread.
#[no_mangle]
pub extern "C" fn mcd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a NUL-terminated string with static lifetime.
#[no_mangle]
pub extern "C" fn mcd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `width * height` row-major pixels.
///
/// # Safety
/// `pixels` must point to `width * height` readable bytes; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_image_from_gray(pixels: *const u8, width: usize, height: usize, out: *mut *mut McdImage) -> McdStatus {
    clear(out);
    guard(|| {
        if pixels.is_null() {
            return Err(null("pixels"));
        }
        let len = width
            .checked_mul(height)
            .ok_or_else(|| Failure(McdStatus::InvalidArgument, "image size overflows".into()))?;
        let data = std::slice::from_raw_parts(pixels, len).to_vec();
        put(out, McdImage(GrayImage::new(width, height, data)?))
    })
}

/// Loads a PNG / PGM / PPM; color images are converted to gray.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_image_load(path: *const c_char, out: *mut *mut McdImage) -> McdStatus {
    clear(out);
    guard(|| {
        let p = path_arg(path)?;
        put(out, McdImage(mcd_core::io::load_gray(&p)?))
    })
}

/// # Safety
/// `image` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mcd_image_free(image: *mut McdImage) {
    free(image)
}

/// # Safety
/// `image` must be a live handle; `width` and `height` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_image_dims(image: *const McdImage, width: *mut usize, height: *mut usize) -> McdStatus {
    guard(|| {
        let (w, h) = deref(image, "image")?.0.dims();
        if width.is_null() || height.is_null() {
            return Err(null("output pointer"));
        }
        *width = w;
        *height = h;
        Ok(())
    })
}

/// Copies `width * height` row-major bytes; nonzero means set.
///
/// # Safety
/// `bits` must point to `width * height` readable bytes; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_mask_from_bytes(bits: *const u8, width: usize, height: usize, out: *mut *mut McdMask) -> McdStatus {
    clear(out);
    guard(|| {
        if bits.is_null() {
            return Err(null("bits"));
        }
        let len = width
            .checked_mul(height)
            .ok_or_else(|| Failure(McdStatus::InvalidArgument, "mask size overflows".into()))?;
        let data = std::slice::from_raw_parts(bits, len).iter().map(|&b| b != 0).collect();
        put(out, McdMask(BinaryMask::new(width, height, data)?))
    })
}

/// Loads a mask image; nonzero pixels are set.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_mask_load(path: *const c_char, out: *mut *mut McdMask) -> McdStatus {
    clear(out);
    guard(|| {
        let p = path_arg(path)?;
        put(out, McdMask(mcd_core::io::load_mask(&p)?))
    })
}

/// # Safety
/// `mask` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mcd_mask_free(mask: *mut McdMask) {
    free(mask)
}

/// Number of set pixels.
///
/// # Safety
/// `mask` must be a live handle; `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_mask_count(mask: *const McdMask, count: *mut usize) -> McdStatus {
    guard(|| {
        let m = deref(mask, "mask")?;
        if count.is_null() {
            return Err(null("count"));
        }
        *count = m.0.count_ones();
        Ok(())
    })
}

/// Anterior-chamber mask from the built-in region-growing segmenter.
/// `merge_ratio` controls when the two largest bright components are
/// treated as one anterior segment (0.65 by default).
///
/// # Safety
/// `image` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_field_of_focus(image: *const McdImage, merge_ratio: f64, out: *mut *mut McdMask) -> McdStatus {
    clear(out);
    guard(|| {
        let g = &deref(image, "image")?.0;
        let cfg = I2acpConfig {
            merge_ratio,
            ..I2acpConfig::default()
        };
        cfg.validate()?;
        put(out, McdMask(field_of_focus(g, &cfg, &FloodFillSegmenter, "ffi")?))
    })
}

#[no_mangle]
pub extern "C" fn mcd_mirp_default() -> McdMirpParams {
    let d = MirpConfig::default();
    McdMirpParams {
        lambda: d.lambda,
        s_min: d.s_min,
        s_max: d.s_max,
        box_w: d.box_w,
        box_h: d.box_h,
    }
}

fn mirp_config(p: &McdMirpParams) -> Result<MirpConfig, Failure> {
    let cfg = MirpConfig {
        lambda: p.lambda,
        s_min: p.s_min,
        s_max: p.s_max,
        box_w: p.box_w,
        box_h: p.box_h,
        ..MirpConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Candidate boxes, each scored 1.
///
/// # Safety
/// All handles must be live; `params` must be readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_propose(
    image: *const McdImage,
    ac_mask: *const McdMask,
    params: *const McdMirpParams,
    out: *mut *mut McdBoxList,
) -> McdStatus {
    clear(out);
    guard(|| {
        let g = &deref(image, "image")?.0;
        let m = &deref(ac_mask, "ac_mask")?.0;
        let cfg = mirp_config(deref(params, "params")?)?;
        let boxes = propose(g, m, &cfg)?;
        put(out, McdBoxList(boxes.into_iter().map(|bbox| Detection { bbox, score: 1.0 }).collect()))
    })
}

/// Whole-image threshold baseline with components of `s_min..=25` pixels.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_detect_threshold(
    image: *const McdImage,
    ac_mask: *const McdMask,
    method: McdThresholdMethod,
    s_min: usize,
    out: *mut *mut McdBoxList,
) -> McdStatus {
    clear(out);
    guard(|| {
        let g = &deref(image, "image")?.0;
        let m = &deref(ac_mask, "ac_mask")?.0;
        let method = match method {
            McdThresholdMethod::Otsu => ThresholdMethod::Otsu,
            McdThresholdMethod::Isodata => ThresholdMethod::Isodata,
        };
        let cfg = BaselineConfig::new(method, s_min);
        cfg.validate()?;
        put(out, McdBoxList(detect_threshold(g, m, &cfg)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_model_load(path: *const c_char, out: *mut *mut McdModel) -> McdStatus {
    clear(out);
    guard(|| {
        let p = path_arg(path)?;
        put(out, McdModel(checkpoint::load(&p)?))
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mcd_model_free(model: *mut McdModel) {
    free(model)
}

/// Cell probability for every box of `boxes`, in order.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_classify(
    model: *const McdModel,
    image: *const McdImage,
    boxes: *const McdBoxList,
    out: *mut *mut McdBoxList,
) -> McdStatus {
    clear(out);
    guard(|| {
        let params = &deref(model, "model")?.0;
        let g = &deref(image, "image")?.0;
        let input: Vec<CandidateBox> = deref(boxes, "boxes")?.0.iter().map(|d| d.bbox).collect();
        let scored = classify(params, g, &input)?;
        put(out, McdBoxList(scored.into_iter().map(|(bbox, score)| Detection { bbox, score }).collect()))
    })
}

/// Full detector at threshold factor `lambda`; box size follows the model.
///
/// # Safety
/// All handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_detect(
    image: *const McdImage,
    ac_mask: *const McdMask,
    model: *const McdModel,
    lambda: f64,
    out: *mut *mut McdBoxList,
) -> McdStatus {
    clear(out);
    guard(|| {
        let g = &deref(image, "image")?.0;
        let m = &deref(ac_mask, "ac_mask")?.0;
        let params = &deref(model, "model")?.0;
        let arch = params.architecture();
        let cfg = MirpConfig {
            lambda,
            box_w: arch.patch_w,
            box_h: arch.patch_h,
            ..MirpConfig::default()
        };
        cfg.validate()?;
        put(out, McdBoxList(detect_mcd(g, m, &cfg, params)?))
    })
}

/// Number of boxes; 0 for a null list.
///
/// # Safety
/// `list` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mcd_box_list_len(list: *const McdBoxList) -> usize {
    list.as_ref().map_or(0, |l| l.0.len())
}

/// # Safety
/// `list` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_box_list_get(list: *const McdBoxList, index: usize, out: *mut McdBox) -> McdStatus {
    guard(|| {
        let l = deref(list, "list")?;
        if out.is_null() {
            return Err(null("output pointer"));
        }
        let d = l.0.get(index).ok_or_else(|| {
            Failure(
                McdStatus::InvalidArgument,
                format!("index {index} out of range for {} boxes", l.0.len()),
            )
        })?;
        *out = McdBox {
            x_tl: d.bbox.x_tl,
            y_tl: d.bbox.y_tl,
            x_br: d.bbox.x_br,
            y_br: d.bbox.y_br,
            score: d.score,
        };
        Ok(())
    })
}

/// # Safety
/// `list` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn mcd_box_list_free(list: *mut McdBoxList) {
    free(list)
}

/// IoU and Dice of two equally sized masks.
///
/// # Safety
/// Handles must be live; `iou` and `dice` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mcd_seg_metrics(pred: *const McdMask, gt: *const McdMask, iou: *mut f64, dice: *mut f64) -> McdStatus {
    guard(|| {
        let (i, d) = seg_metrics(&deref(pred, "pred")?.0, &deref(gt, "gt")?.0)?;
        if iou.is_null() || dice.is_null() {
            return Err(null("output pointer"));
        }
        *iou = i;
        *dice = d;
        Ok(())
    })
}
