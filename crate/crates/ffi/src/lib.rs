//! C ABI for the wino3d engine: opaque handles, integer status codes, and a
//! thread-local last-error string. The matching header `include/wino3d.h`
//! is regenerated by the build script; C callers link the cdylib or the
//! staticlib artifact.
//!
//! Ownership rules are the usual C ones: every handle returned through an
//! `out` parameter is owned by the caller and must go back through the
//! matching `*_free`. Borrowed pointers (`wino3d_tensor_data`,
//! `wino3d_last_error`) stay valid only until the owner is freed or the
//! next API call on the same thread, respectively.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use wino3d::io::AnyTensor;
use wino3d::model_io::{load_model, save_model};
use wino3d::tensor::Tensor;
use wino3d::trainer::Model;
use wino3d::Error;

/// Status code returned by every fallible call. `wino3d_last_error` holds
/// the human-readable detail for the most recent non-OK return on this
/// thread.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Wino3dStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Arguments were structurally invalid: bad shapes, lengths, ranks,
    /// non-UTF-8 paths, or rejected configuration.
    InvalidArgument = 2,
    /// The filesystem refused the operation.
    Io = 3,
    /// The file is not a valid `.lrt` / `.lrw` payload.
    Format = 4,
    /// An internal numeric or consistency check failed.
    Internal = 5,
}

/// Opaque handle around an f32 tensor.
pub struct Wino3dTensor(Tensor<f32>);

/// Opaque handle around a loaded model.
pub struct Wino3dModel(Model<f32>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: Wino3dStatus, msg: &str) -> Wino3dStatus {
    let msg = CString::new(msg.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

fn fail_with(err: &Error) -> Wino3dStatus {
    let status = match err {
        Error::Io(_) => Wino3dStatus::Io,
        Error::Format(_) => Wino3dStatus::Format,
        Error::Shape(_)
        | Error::UnsupportedSpec { .. }
        | Error::Rank(_)
        | Error::EmptyMask
        | Error::Data(_)
        | Error::Config(_) => Wino3dStatus::InvalidArgument,
        _ => Wino3dStatus::Internal,
    };
    fail(status, &err.to_string())
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, Wino3dStatus> {
    if ptr.is_null() {
        return Err(fail(Wino3dStatus::NullArgument, "path is null"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => Err(fail(Wino3dStatus::InvalidArgument, "path is not UTF-8")),
    }
}

unsafe fn give<T>(out: *mut *mut T, value: T) -> Wino3dStatus {
    if out.is_null() {
        return fail(Wino3dStatus::NullArgument, "out pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Wino3dStatus::Ok
}

/// Version of the underlying engine as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wino3d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on the calling thread; empty string
/// if nothing failed yet. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn wino3d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ── tensors ─────────────────────────────────────────────────────────────────

/// Build a tensor from `ndim` extents and exactly `len` f32 values
/// (row-major). The data is copied.
///
/// # Safety
/// `dims` must point to `ndim` readable `size_t`s and `data` to `len`
/// readable floats.
#[no_mangle]
pub unsafe extern "C" fn wino3d_tensor_new(
    dims: *const usize,
    ndim: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut Wino3dTensor,
) -> Wino3dStatus {
    if dims.is_null() || data.is_null() {
        return fail(Wino3dStatus::NullArgument, "dims or data is null");
    }
    let dims = std::slice::from_raw_parts(dims, ndim).to_vec();
    let data = std::slice::from_raw_parts(data, len).to_vec();
    match Tensor::new(dims, data) {
        Ok(t) => give(out, Wino3dTensor(t)),
        Err(e) => fail_with(&e),
    }
}

/// Load a `.lrt` tensor. f64 payloads are narrowed to f32.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wino3d_tensor_load(
    path: *const c_char,
    out: *mut *mut Wino3dTensor,
) -> Wino3dStatus {
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match wino3d::io::load_tensor(path) {
        Ok(AnyTensor::F32(t)) => give(out, Wino3dTensor(t)),
        Ok(AnyTensor::F64(t)) => give(out, Wino3dTensor(t.cast())),
        Err(e) => fail_with(&e),
    }
}

/// Write the tensor as an f32 `.lrt` file.
///
/// # Safety
/// `t` must be a live tensor handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn wino3d_tensor_save(
    t: *const Wino3dTensor,
    path: *const c_char,
) -> Wino3dStatus {
    if t.is_null() {
        return fail(Wino3dStatus::NullArgument, "tensor is null");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match wino3d::io::save_tensor(&(*t).0, path) {
        Ok(()) => Wino3dStatus::Ok,
        Err(e) => fail_with(&e),
    }
}

/// Number of axes, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn wino3d_tensor_ndim(t: *const Wino3dTensor) -> usize {
    if t.is_null() {
        0
    } else {
        (*t).0.ndim()
    }
}

/// Copy the extents into `out`, which must hold `ndim` values (query
/// `wino3d_tensor_ndim` first).
///
/// # Safety
/// `t` must be a live tensor handle; `out` must point to `ndim` writable
/// `size_t`s.
#[no_mangle]
pub unsafe extern "C" fn wino3d_tensor_dims(
    t: *const Wino3dTensor,
    out: *mut usize,
    ndim: usize,
) -> Wino3dStatus {
    if t.is_null() || out.is_null() {
        return fail(Wino3dStatus::NullArgument, "tensor or out is null");
    }
    let dims = (*t).0.dims();
    if dims.len() != ndim {
        return fail(
            Wino3dStatus::InvalidArgument,
            &format!("tensor has {} axes, caller expected {ndim}", dims.len()),
        );
    }
    std::slice::from_raw_parts_mut(out, ndim).copy_from_slice(dims);
    Wino3dStatus::Ok
}

/// Total element count, or 0 for a null handle.
///
/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn wino3d_tensor_len(t: *const Wino3dTensor) -> usize {
    if t.is_null() {
        0
    } else {
        (*t).0.len()
    }
}

/// Borrowed pointer to the row-major elements; null for a null handle.
/// Valid until the tensor is freed.
///
/// # Safety
/// `t` must be null or a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn wino3d_tensor_data(t: *const Wino3dTensor) -> *const f32 {
    if t.is_null() {
        std::ptr::null()
    } else {
        (*t).0.data().as_ptr()
    }
}

/// Release a tensor handle. Null is a no-op.
///
/// # Safety
/// `t` must be null or an owned handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn wino3d_tensor_free(t: *mut Wino3dTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

// ── models ──────────────────────────────────────────────────────────────────

/// Load a `.lrw` model.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wino3d_model_load(
    path: *const c_char,
    out: *mut *mut Wino3dModel,
) -> Wino3dStatus {
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match load_model(path) {
        Ok(m) => give(out, Wino3dModel(m)),
        Err(e) => fail_with(&e),
    }
}

/// Write the model as a `.lrw` file.
///
/// # Safety
/// `m` must be a live model handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn wino3d_model_save(
    m: *const Wino3dModel,
    path: *const c_char,
) -> Wino3dStatus {
    if m.is_null() {
        return fail(Wino3dStatus::NullArgument, "model is null");
    }
    let path = match path_arg(path) {
        Ok(p) => p,
        Err(s) => return s,
    };
    match save_model(&(*m).0, path) {
        Ok(()) => Wino3dStatus::Ok,
        Err(e) => fail_with(&e),
    }
}

/// Number of layers, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn wino3d_model_layer_count(m: *const Wino3dModel) -> usize {
    if m.is_null() {
        0
    } else {
        (*m).0.layers.len()
    }
}

/// Run the model on a `(C, D, H, W)` input tensor; on success `out`
/// receives a new rank-1 tensor of logits.
///
/// # Safety
/// `m` and `input` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wino3d_model_forward(
    m: *const Wino3dModel,
    input: *const Wino3dTensor,
    out: *mut *mut Wino3dTensor,
) -> Wino3dStatus {
    if m.is_null() || input.is_null() {
        return fail(Wino3dStatus::NullArgument, "model or input is null");
    }
    let result = catch_unwind(AssertUnwindSafe(|| (*m).0.infer(&(*input).0)));
    match result {
        Ok(Ok(logits)) => {
            let n = logits.len();
            match Tensor::new(vec![n], logits) {
                Ok(t) => give(out, Wino3dTensor(t)),
                Err(e) => fail_with(&e),
            }
        }
        Ok(Err(e)) => fail_with(&e),
        Err(_) => fail(Wino3dStatus::Internal, "forward pass panicked"),
    }
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `m` must be null or an owned handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn wino3d_model_free(m: *mut Wino3dModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
