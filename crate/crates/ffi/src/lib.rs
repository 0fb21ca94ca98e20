//! C interface to the gcvit classifier.
//!
//! Every function returns a [`GcvStatus`]. On failure a description is kept
//! per thread and can be fetched with [`gcv_last_error_message`]. Models are
//! opaque [`GcvModel`] handles created by [`gcv_model_load`] and released with
//! [`gcv_model_free`]. Strings returned by this library must be released with
//! [`gcv_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use gcvit::data::augment::{preprocess_eval, AugmentPolicy};
use gcvit::eval::{confusion_matrix, default_class_names, report};
use gcvit::model::{load_checkpoint, CheckpointMeta, GcVit};
use gcvit::train::{cosine_lr, smoothed_cross_entropy};
use gcvit::{Error, ImageTensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Decode = 4,
    Shape = 5,
    Checkpoint = 6,
    Panic = 7,
    Internal = 8,
}

/// Aggregate classification metrics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GcvReportSummary {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

/// A loaded model together with its class names and preprocessing.
pub struct GcvModel {
    model: GcVit,
    meta: CheckpointMeta,
    policy: AugmentPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

struct Failure(GcvStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => GcvStatus::Io,
            Error::Decode { .. } | Error::UnreadableFiles(_) => GcvStatus::Decode,
            Error::Shape { .. } | Error::DimensionMismatch(_) => GcvStatus::Shape,
            Error::Checkpoint(_) => GcvStatus::Checkpoint,
            Error::InvalidConfig(_) | Error::Range(_) | Error::NonFinite(_) => GcvStatus::InvalidArgument,
            _ => GcvStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(GcvStatus::InvalidArgument, message.into())
}

/// Runs `body`, recording any error or panic for [`gcv_last_error_message`].
fn guard<F: FnOnce() -> Result<(), Failure>>(body: F) -> GcvStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => GcvStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {message}"));
            GcvStatus::Panic
        }
    }
}

fn non_null<T>(ptr: *const T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        Err(Failure(GcvStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    non_null(ptr, what)?;
    // SAFETY: checked non-null; the caller guarantees NUL termination.
    let s = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

/// # Safety
/// `model` must be null or a live handle from [`gcv_model_load`].
unsafe fn model_arg<'a>(model: *const GcvModel) -> Result<&'a GcvModel, Failure> {
    non_null(model, "model")?;
    // SAFETY: non-null and, per the contract, a live handle.
    Ok(unsafe { &*model })
}

/// Returns the message of the last failed call on this thread, or null if
/// there is none. Release it with [`gcv_string_free`].
#[no_mangle]
pub extern "C" fn gcv_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(m) => CString::new(m.replace('\0', " ")).map_or(std::ptr::null_mut(), CString::into_raw),
        None => std::ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be null or a string returned by this library that has not been
/// freed yet.
#[no_mangle]
pub unsafe extern "C" fn gcv_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: the string was produced by `CString::into_raw` in this crate.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gcv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `gcvit train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gcv_model_load(path: *const c_char, out: *mut *mut GcvModel) -> GcvStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path, "path") }?;
        let (model, meta) = load_checkpoint(&path)?;
        let policy = meta
            .policy
            .clone()
            .unwrap_or_else(|| AugmentPolicy::with_crop_size(model.config.input_size.0));
        let handle = Box::new(GcvModel { model, meta, policy });
        // SAFETY: `out` checked non-null.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`gcv_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gcv_model_free(model: *mut GcvModel) {
    if !model.is_null() {
        // SAFETY: produced by `Box::into_raw` in `gcv_model_load`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gcv_model_num_classes(model: *const GcvModel, out: *mut usize) -> GcvStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let m = unsafe { model_arg(model) }?;
        // SAFETY: checked non-null.
        unsafe { *out = m.model.num_classes() };
        Ok(())
    })
}

/// Expected input height and width; other sizes are resized before inference.
///
/// # Safety
/// `model` must be a live handle and both out pointers valid.
#[no_mangle]
pub unsafe extern "C" fn gcv_model_input_size(
    model: *const GcvModel,
    out_height: *mut usize,
    out_width: *mut usize,
) -> GcvStatus {
    guard(|| {
        non_null(out_height, "out_height")?;
        non_null(out_width, "out_width")?;
        // SAFETY: forwarded caller contract.
        let m = unsafe { model_arg(model) }?;
        let (h, w) = m.model.config.input_size;
        // SAFETY: checked non-null.
        unsafe {
            *out_height = h;
            *out_width = w;
        }
        Ok(())
    })
}

/// Name of class `index`. Release the string with [`gcv_string_free`].
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gcv_model_class_name(model: *const GcvModel, index: usize, out: *mut *mut c_char) -> GcvStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let m = unsafe { model_arg(model) }?;
        if index >= m.model.num_classes() {
            return Err(invalid(format!("class index {index} out of range")));
        }
        let name = m
            .meta
            .class_names
            .get(index)
            .cloned()
            .unwrap_or_else(|| format!("class_{index}"));
        let c = CString::new(name).map_err(|_| invalid("class name contains NUL"))?;
        // SAFETY: checked non-null.
        unsafe { *out = c.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `probs` must point to `len` writable doubles and `top1` be valid.
unsafe fn write_prediction(m: &GcvModel, image: &ImageTensor, probs: *mut f64, len: usize, top1: *mut usize) -> Result<(), Failure> {
    non_null(probs, "probs")?;
    non_null(top1, "top1")?;
    let c = m.model.num_classes();
    if len != c {
        return Err(Failure(GcvStatus::Shape, format!("probability buffer holds {len} values, model has {c} classes")));
    }
    let p = m.model.forward(&preprocess_eval(image, &m.policy)?)?;
    // SAFETY: caller provides `len` writable doubles.
    let dst = unsafe { std::slice::from_raw_parts_mut(probs, len) };
    dst.copy_from_slice(p.as_slice().expect("contiguous probabilities"));
    // SAFETY: checked non-null.
    unsafe { *top1 = gcvit::model::argmax(&p) };
    Ok(())
}

/// Classifies an image file. Writes `len` class probabilities and the top-1 index.
///
/// # Safety
/// `model` must be a live handle, `path` a NUL-terminated string, `probs`
/// room for `len` doubles and `top1` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gcv_model_predict_file(
    model: *const GcvModel,
    path: *const c_char,
    probs: *mut f64,
    len: usize,
    top1: *mut usize,
) -> GcvStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let m = unsafe { model_arg(model) }?;
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path, "path") }?;
        let image = ImageTensor::load(&path)?;
        // SAFETY: forwarded caller contract.
        unsafe { write_prediction(m, &image, probs, len, top1) }
    })
}

/// Classifies interleaved row-major RGB8 pixels (`height * width * 3` bytes).
///
/// # Safety
/// `pixels` must point to `height * width * 3` readable bytes; the other
/// pointers follow [`gcv_model_predict_file`].
#[no_mangle]
pub unsafe extern "C" fn gcv_model_predict_pixels(
    model: *const GcvModel,
    pixels: *const u8,
    height: usize,
    width: usize,
    probs: *mut f64,
    len: usize,
    top1: *mut usize,
) -> GcvStatus {
    guard(|| {
        // SAFETY: forwarded caller contract.
        let m = unsafe { model_arg(model) }?;
        non_null(pixels, "pixels")?;
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(3))
            .ok_or_else(|| invalid("image dimensions overflow"))?;
        // SAFETY: caller provides `n` readable bytes.
        let bytes = unsafe { std::slice::from_raw_parts(pixels, n) };
        let image = ImageTensor::from_rgb8(height, width, bytes)?;
        // SAFETY: forwarded caller contract.
        unsafe { write_prediction(m, &image, probs, len, top1) }
    })
}

/// Cosine-annealed learning rate at epoch `t` of `total`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gcv_cosine_lr(t: usize, total: usize, lr_min: f64, lr_max: f64, out: *mut f64) -> GcvStatus {
    guard(|| {
        non_null(out, "out")?;
        let v = cosine_lr(t, total, lr_min, lr_max)?;
        // SAFETY: checked non-null.
        unsafe { *out = v };
        Ok(())
    })
}

/// Label-smoothed cross-entropy of `num_classes` logits against `label`.
///
/// # Safety
/// `logits` must point to `num_classes` readable doubles and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn gcv_smoothed_cross_entropy(
    logits: *const f64,
    num_classes: usize,
    label: usize,
    epsilon: f64,
    out: *mut f64,
) -> GcvStatus {
    guard(|| {
        non_null(logits, "logits")?;
        non_null(out, "out")?;
        // SAFETY: caller provides `num_classes` doubles.
        let l = unsafe { std::slice::from_raw_parts(logits, num_classes) };
        let v = smoothed_cross_entropy(ndarray::ArrayView1::from(l), label, epsilon)?;
        // SAFETY: checked non-null.
        unsafe { *out = v };
        Ok(())
    })
}

/// # Safety
/// `labels` and `predictions` must point to `n` readable values.
unsafe fn pairs<'a>(labels: *const usize, predictions: *const usize, n: usize) -> Result<(&'a [usize], &'a [usize]), Failure> {
    if n == 0 {
        return Ok((&[], &[]));
    }
    non_null(labels, "labels")?;
    non_null(predictions, "predictions")?;
    // SAFETY: caller provides `n` values in each buffer.
    Ok(unsafe { (std::slice::from_raw_parts(labels, n), std::slice::from_raw_parts(predictions, n)) })
}

/// Row-major `num_classes * num_classes` counts, rows are true classes.
///
/// # Safety
/// `labels` and `predictions` must hold `n` values; `out` must have room for
/// `num_classes * num_classes` counts.
#[no_mangle]
pub unsafe extern "C" fn gcv_confusion_matrix(
    labels: *const usize,
    predictions: *const usize,
    n: usize,
    num_classes: usize,
    out: *mut u64,
) -> GcvStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let (l, p) = unsafe { pairs(labels, predictions, n) }?;
        let m = confusion_matrix(p, l, default_class_names(num_classes))?;
        // SAFETY: caller provides room for num_classes^2 counts.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, num_classes * num_classes) };
        for (d, v) in dst.iter_mut().zip(m.counts.iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Accuracy and macro / weighted precision, recall and F1.
///
/// # Safety
/// `labels` and `predictions` must hold `n` values and `out` be valid.
#[no_mangle]
pub unsafe extern "C" fn gcv_classification_report(
    labels: *const usize,
    predictions: *const usize,
    n: usize,
    num_classes: usize,
    out: *mut GcvReportSummary,
) -> GcvStatus {
    guard(|| {
        non_null(out, "out")?;
        // SAFETY: forwarded caller contract.
        let (l, p) = unsafe { pairs(labels, predictions, n) }?;
        let r = report(&confusion_matrix(p, l, default_class_names(num_classes))?)?;
        let summary = GcvReportSummary {
            accuracy: r.accuracy,
            macro_precision: r.macro_avg.precision,
            macro_recall: r.macro_avg.recall,
            macro_f1: r.macro_avg.f1,
            weighted_precision: r.weighted_avg.precision,
            weighted_recall: r.weighted_avg.recall,
            weighted_f1: r.weighted_avg.f1,
        };
        // SAFETY: checked non-null.
        unsafe { *out = summary };
        Ok(())
    })
}
