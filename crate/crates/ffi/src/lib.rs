//! C ABI over the amfuse model.
//!
//! Every fallible call returns an [`AmfuseStatus`]; on failure the message is
//! available from [`amfuse_last_error`] on the same thread. Strings handed out
//! by this library are released with [`amfuse_string_free`], models with
//! [`amfuse_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use amfuse::model::{count_params, CmNext, ModelConfig};
use amfuse::train::argmax_classes;
use amfuse::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmfuseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Usage = 4,
    Dimension = 5,
    Data = 6,
    Format = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Opaque model handle.
pub struct AmfuseModel {
    inner: CmNext,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> AmfuseStatus {
    match e {
        Error::Config(_) => AmfuseStatus::Config,
        Error::Usage(_) => AmfuseStatus::Usage,
        Error::Dimension { .. } => AmfuseStatus::Dimension,
        Error::Data(_) | Error::Undefined(_) => AmfuseStatus::Data,
        Error::Format(_) => AmfuseStatus::Format,
        Error::Io { .. } => AmfuseStatus::Io,
    }
}

struct Fail(AmfuseStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> AmfuseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmfuseStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            AmfuseStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(AmfuseStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(AmfuseStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const AmfuseModel) -> Result<&'a CmNext, Fail> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

fn into_handle(model: CmNext, out: *mut *mut AmfuseModel) {
    unsafe { *out = Box::into_raw(Box::new(AmfuseModel { inner: model })) };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn amfuse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null. Free with [`amfuse_string_free`].
#[no_mangle]
pub extern "C" fn amfuse_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn amfuse_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a freshly initialised model from a JSON config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_new(config_json: *const c_char, seed: u64, out: *mut *mut AmfuseModel) -> AmfuseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ModelConfig::from_json(str_arg(config_json, "config_json")?)?;
        into_handle(CmNext::new(cfg, seed)?, out);
        Ok(())
    })
}

/// Loads `.nnz` weights saved for the given config.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_load(
    config_json: *const c_char,
    weights_path: *const c_char,
    out: *mut *mut AmfuseModel,
) -> AmfuseStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = ModelConfig::from_json(str_arg(config_json, "config_json")?)?;
        let path = str_arg(weights_path, "weights_path")?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        into_handle(CmNext::from_nnz(&bytes, cfg)?, out);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `weights_path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_save(model: *const AmfuseModel, weights_path: *const c_char) -> AmfuseStatus {
    guard(|| {
        let m = model_ref(model)?;
        let path = Path::new(str_arg(weights_path, "weights_path")?);
        std::fs::write(path, m.to_nnz()).map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_free(model: *mut AmfuseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Config of a model as JSON. Free with [`amfuse_string_free`]; null on a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_config_json(model: *const AmfuseModel) -> *mut c_char {
    match model.as_ref() {
        Some(m) => CString::new(m.inner.config().to_json()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_num_classes(model: *const AmfuseModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().num_classes)
}

/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_num_modalities(model: *const AmfuseModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().modalities.len())
}

/// Scalar parameter total and the increment from one more secondary modality.
///
/// # Safety
/// `config_json` NUL-terminated; output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn amfuse_count_params(
    config_json: *const c_char,
    total: *mut u64,
    per_modality_increment: *mut u64,
) -> AmfuseStatus {
    guard(|| {
        if total.is_null() || per_modality_increment.is_null() {
            return Err(null("output"));
        }
        let pc = count_params(&ModelConfig::from_json(str_arg(config_json, "config_json")?)?)?;
        *total = pc.total as u64;
        *per_modality_increment = pc.per_modality_increment as u64;
        Ok(())
    })
}

unsafe fn run_forward(model: *const AmfuseModel, frames: *const f64, height: usize, width: usize) -> Result<Tensor, Fail> {
    let m = model_ref(model)?;
    if frames.is_null() {
        return Err(null("frames"));
    }
    let plane = 3 * height * width;
    let n = m.config().modalities.len();
    let data = std::slice::from_raw_parts(frames, n * plane);
    let tensors = (0..n)
        .map(|i| Tensor::new(vec![3, height, width], data[i * plane..(i + 1) * plane].to_vec()))
        .collect::<amfuse::Result<Vec<_>>>()?;
    Ok(m.predict(&tensors)?)
}

/// Forward pass. `frames` holds `modalities x 3 x height x width` values in
/// `[0, 1]`, modality-major; `logits` receives `num_classes x height x width`.
///
/// # Safety
/// `frames` and `logits` must point to buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_forward(
    model: *const AmfuseModel,
    frames: *const f64,
    height: usize,
    width: usize,
    logits: *mut f64,
    logits_len: usize,
) -> AmfuseStatus {
    guard(|| {
        if logits.is_null() {
            return Err(null("logits"));
        }
        let out = run_forward(model, frames, height, width)?;
        if logits_len < out.numel() {
            return Err(Fail(
                AmfuseStatus::BufferTooSmall,
                format!("logits buffer holds {logits_len}, need {}", out.numel()),
            ));
        }
        std::slice::from_raw_parts_mut(logits, out.numel()).copy_from_slice(out.data());
        Ok(())
    })
}

/// Per-pixel class ids (`height x width`), ties resolved to the lower class.
///
/// # Safety
/// `frames` and `classes` must point to buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn amfuse_model_segment(
    model: *const AmfuseModel,
    frames: *const f64,
    height: usize,
    width: usize,
    classes: *mut u32,
    classes_len: usize,
) -> AmfuseStatus {
    guard(|| {
        if classes.is_null() {
            return Err(null("classes"));
        }
        let ids = argmax_classes(&run_forward(model, frames, height, width)?)?;
        if classes_len < ids.len() {
            return Err(Fail(
                AmfuseStatus::BufferTooSmall,
                format!("class buffer holds {classes_len}, need {}", ids.len()),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(classes, ids.len());
        for (d, &c) in dst.iter_mut().zip(&ids) {
            *d = c as u32;
        }
        Ok(())
    })
}
