//! C ABI for loading a trained generator and calling the boundary metrics.
//!
//! Every function returns an [`SaStatus`]. On failure the message is kept per
//! thread and can be read with [`sa_last_error_message`]. Images cross the
//! boundary as planar RGB `f32` buffers of length `3 * height * width` with
//! values in [-1, 1]; label maps as `u32` buffers of length `height * width`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use semantic_adapt::gradfilters::{boundary_mask, label_grad_pair, LabelMap};
use semantic_adapt::losses::SoftnessParams;
use semantic_adapt::networks::GeneratorNet;
use semantic_adapt::tensor::{Shape, Tensor};
use semantic_adapt::trainer::{load_generator, Direction};
use semantic_adapt::{eval, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    LabelOutOfRange = 4,
    Checkpoint = 5,
    Io = 6,
    NonFinite = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaDirection {
    VirtualToReal = 0,
    RealToVirtual = 1,
}

/// Opaque handle to a loaded generator.
pub struct SaGenerator {
    net: GeneratorNet,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: SaStatus, msg: impl Into<String>) -> SaStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn from_error(e: Error) -> SaStatus {
    let status = match &e {
        Error::Shape { .. } => SaStatus::Shape,
        Error::InvalidArgument { .. } | Error::Config(_) => SaStatus::InvalidArgument,
        Error::LabelOutOfRange { .. } => SaStatus::LabelOutOfRange,
        Error::Checkpoint(_) => SaStatus::Checkpoint,
        Error::Io { .. } | Error::Image { .. } | Error::Corpus(_) => SaStatus::Io,
        Error::NonFinite { .. } => SaStatus::NonFinite,
        Error::BackwardTwice | Error::NonScalarLoss(_) => SaStatus::Internal,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), SaStatus>) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SaStatus::Internal, "panic inside library call"),
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), SaStatus> {
    if p.is_null() {
        Err(fail(SaStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn pixels(height: usize, width: usize) -> Result<usize, SaStatus> {
    match height.checked_mul(width) {
        Some(n) if n > 0 => Ok(n),
        _ => Err(fail(SaStatus::InvalidArgument, format!("bad image size {height}x{width}"))),
    }
}

unsafe fn image(ptr: *const f32, height: usize, width: usize) -> Result<Tensor, SaStatus> {
    non_null(ptr, "image")?;
    let n = pixels(height, width)?;
    let data = std::slice::from_raw_parts(ptr, 3 * n).to_vec();
    Tensor::new(Shape::new(1, 3, height, width), data).map_err(from_error)
}

unsafe fn labels(ptr: *const u32, height: usize, width: usize, num_classes: usize) -> Result<LabelMap, SaStatus> {
    non_null(ptr, "labels")?;
    let n = pixels(height, width)?;
    let values = std::slice::from_raw_parts(ptr, n).to_vec();
    LabelMap::new(1, height, width, num_classes, values).map_err(from_error)
}

/// Copies the last error message of this thread into `buf` (NUL terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn sa_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads one generator from a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_generator_load(
    path: *const c_char,
    direction: SaDirection,
    out: *mut *mut SaGenerator,
) -> SaStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(SaStatus::InvalidArgument, "path is not UTF-8"))?;
        let dir = match direction {
            SaDirection::VirtualToReal => Direction::VirtualToReal,
            SaDirection::RealToVirtual => Direction::RealToVirtual,
        };
        let net = load_generator(Path::new(path), dir).map_err(from_error)?;
        *out = Box::into_raw(Box::new(SaGenerator { net }));
        Ok(())
    })
}

/// Releases a generator. Null is ignored.
///
/// # Safety
/// `generator` must come from [`sa_generator_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sa_generator_free(generator: *mut SaGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Height and width must be multiples of this value.
///
/// # Safety
/// `generator` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_generator_size_multiple(generator: *const SaGenerator, out: *mut usize) -> SaStatus {
    guard(|| {
        non_null(generator, "generator")?;
        non_null(out, "out")?;
        *out = (*generator).net.config().divisor();
        Ok(())
    })
}

/// Translates one image. `input` and `output` hold `3 * height * width` floats
/// and may not overlap.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sa_generator_adapt(
    generator: *const SaGenerator,
    input: *const f32,
    height: usize,
    width: usize,
    output: *mut f32,
) -> SaStatus {
    guard(|| {
        non_null(generator, "generator")?;
        non_null(output, "output")?;
        let x = image(input, height, width)?;
        let y = (*generator).net.adapt(&x).map_err(from_error)?;
        std::ptr::copy_nonoverlapping(y.data().as_ptr(), output, y.numel());
        Ok(())
    })
}

/// Writes the 0/1 class-boundary mask of a label map (`height * width` floats).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn sa_boundary_mask(
    label_values: *const u32,
    height: usize,
    width: usize,
    num_classes: usize,
    output: *mut f32,
) -> SaStatus {
    guard(|| {
        non_null(output, "output")?;
        let l = labels(label_values, height, width, num_classes)?;
        let m = boundary_mask(&l, &label_grad_pair());
        std::ptr::copy_nonoverlapping(m.data().as_ptr(), output, m.numel());
        Ok(())
    })
}

/// Soft gradient-sensitive loss between an image and its translation.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sa_soft_grad_loss(
    x: *const f32,
    x_adapted: *const f32,
    label_values: *const u32,
    height: usize,
    width: usize,
    num_classes: usize,
    alpha: f32,
    beta: f32,
    out: *mut f64,
) -> SaStatus {
    guard(|| {
        non_null(out, "out")?;
        let a = image(x, height, width)?;
        let b = image(x_adapted, height, width)?;
        let l = labels(label_values, height, width, num_classes)?;
        let p = SoftnessParams::new(alpha, beta).map_err(from_error)?;
        *out = eval::soft_grad_value(&a, &b, &l, p).map_err(from_error)?;
        Ok(())
    })
}
