//! C interface to the codec and the learned decompressor.
//!
//! Every fallible function returns a [`CdcStatus`]; on failure a message is
//! available from [`cdc_last_error`] on the same thread. Objects are opaque
//! handles released with their matching `*_free` function. A model handle must
//! not be used from two threads at once.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use cdc_core::codec::{self, BitsDropped, PackedImage};
use cdc_core::nets::Generator;
use cdc_core::raster::RawImage;
use cdc_core::training::{reconstruct, Checkpoint};
use cdc_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    NotACdcFile = 4,
    UnsupportedVersion = 5,
    CorruptPayload = 6,
    Io = 7,
    Checkpoint = 8,
    Internal = 9,
}

/// A packed (compressed) image.
pub struct CdcPacked(PackedImage);

/// A generator loaded from a training checkpoint.
pub struct CdcModel {
    gen: Generator<f32>,
    bits: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> CdcStatus {
    match e {
        Error::InvalidParameter(_) | Error::Shape { .. } | Error::Raster(_) => CdcStatus::InvalidArgument,
        Error::NotACdcFile(_) => CdcStatus::NotACdcFile,
        Error::UnsupportedVersion(_) => CdcStatus::UnsupportedVersion,
        Error::CorruptPayload { .. } => CdcStatus::CorruptPayload,
        Error::Io(_) | Error::File { .. } => CdcStatus::Io,
        Error::Checkpoint(_) | Error::Config(_) => CdcStatus::Checkpoint,
        _ => CdcStatus::Internal,
    }
}

/// Runs `f`, translating errors and panics into a status and a message.
fn guard(f: impl FnOnce() -> Result<(), (CdcStatus, String)>) -> CdcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CdcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CdcStatus::Internal
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, (CdcStatus, String)>;
}

impl<T> OrStatus<T> for cdc_core::Result<T> {
    fn or_status(self) -> Result<T, (CdcStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (CdcStatus, String) {
    (CdcStatus::NullArgument, format!("{what} is null"))
}

unsafe fn slice<'a>(ptr: *const u8, len: usize, what: &str) -> Result<&'a [u8], (CdcStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a>(ptr: *mut u8, len: usize, need: usize) -> Result<&'a mut [u8], (CdcStatus, String)> {
    if len < need {
        return Err((CdcStatus::BufferTooSmall, format!("output buffer holds {len} bytes, {need} needed")));
    }
    if ptr.is_null() {
        return Err(null("output buffer"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn write_rgb(img: &RawImage, out: &mut [u8]) {
    for (dst, px) in out.chunks_exact_mut(3).zip(img.pixels()) {
        dst.copy_from_slice(px);
    }
}

/// The message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn cdc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Compression factor `8 / (8 - bits)` as a reduced fraction.
///
/// # Safety
/// `numer` and `denom` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cdc_compression_factor(bits: u32, numer: *mut u32, denom: *mut u32) -> CdcStatus {
    guard(|| {
        if numer.is_null() || denom.is_null() {
            return Err(null("output"));
        }
        let f = codec::compression_factor(bits).or_status()?;
        *numer = *f.numer();
        *denom = *f.denom();
        Ok(())
    })
}

/// Compresses `width * height` RGB pixels (3 bytes each, row-major).
///
/// # Safety
/// `rgb` must point to `rgb_len` readable bytes and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cdc_compress(
    rgb: *const u8,
    rgb_len: usize,
    width: u32,
    height: u32,
    bits: u32,
    out: *mut *mut CdcPacked,
) -> CdcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let b = BitsDropped::new(bits).or_status()?;
        let need = 3 * width as usize * height as usize;
        if rgb_len != need {
            return Err((CdcStatus::InvalidArgument, format!("expected {need} bytes of RGB, got {rgb_len}")));
        }
        let data = slice(rgb, rgb_len, "rgb")?;
        let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let img = RawImage::new(width, height, pixels).or_status()?;
        *out = Box::into_raw(Box::new(CdcPacked(codec::compress_image(&img, b))));
        Ok(())
    })
}

/// Width in pixels, or 0 for a null handle.
///
/// # Safety
/// `packed` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdc_packed_width(packed: *const CdcPacked) -> u32 {
    packed.as_ref().map_or(0, |p| p.0.width())
}

/// Height in pixels, or 0 for a null handle.
///
/// # Safety
/// `packed` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdc_packed_height(packed: *const CdcPacked) -> u32 {
    packed.as_ref().map_or(0, |p| p.0.height())
}

/// Bits dropped per channel, or 0 for a null handle.
///
/// # Safety
/// `packed` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdc_packed_bits(packed: *const CdcPacked) -> u32 {
    packed.as_ref().map_or(0, |p| p.0.bits().get() as u32)
}

/// The packed code bytes, owned by the handle. Writes the length to `len`.
///
/// # Safety
/// `packed` must be a live handle and `len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cdc_packed_payload(packed: *const CdcPacked, len: *mut usize) -> *const u8 {
    match (packed.as_ref(), len.is_null()) {
        (Some(p), false) => {
            *len = p.0.payload().len();
            p.0.payload().as_ptr()
        }
        _ => std::ptr::null(),
    }
}

/// Serializes to the `.cdc` container format. Release the bytes with [`cdc_bytes_free`].
///
/// # Safety
/// `packed` must be a live handle; `out` and `out_len` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cdc_encode(packed: *const CdcPacked, out: *mut *mut u8, out_len: *mut usize) -> CdcStatus {
    guard(|| {
        let p = packed.as_ref().ok_or_else(|| null("packed"))?;
        if out.is_null() || out_len.is_null() {
            return Err(null("output"));
        }
        let bytes = codec::encode_file(&p.0).into_boxed_slice();
        *out_len = bytes.len();
        *out = Box::into_raw(bytes).cast::<u8>();
        Ok(())
    })
}

/// Parses a `.cdc` container.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cdc_decode(data: *const u8, len: usize, out: *mut *mut CdcPacked) -> CdcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = codec::decode_file(slice(data, len, "data")?).or_status()?;
        *out = Box::into_raw(Box::new(CdcPacked(p)));
        Ok(())
    })
}

/// Midpoint reconstruction into a caller buffer of at least `3 * width * height` bytes.
///
/// # Safety
/// `packed` must be a live handle and `rgb_out` writable for `rgb_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cdc_decompress_naive(packed: *const CdcPacked, rgb_out: *mut u8, rgb_len: usize) -> CdcStatus {
    guard(|| {
        let p = packed.as_ref().ok_or_else(|| null("packed"))?;
        let need = 3 * p.0.width() as usize * p.0.height() as usize;
        let out = slice_mut(rgb_out, rgb_len, need)?;
        write_rgb(&codec::decompress_naive(&p.0), out);
        Ok(())
    })
}

/// Loads the generator from a training checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cdc_model_load(path: *const c_char, out: *mut *mut CdcModel) -> CdcStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (CdcStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let ck = Checkpoint::load(path).or_status()?;
        let gen = ck.generator().or_status()?;
        *out = Box::into_raw(Box::new(CdcModel { gen, bits: ck.config.bits_dropped }));
        Ok(())
    })
}

/// Side of the square tiles the model processes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdc_model_input_size(model: *const CdcModel) -> u32 {
    model.as_ref().map_or(0, |m| m.gen.config().input_size as u32)
}

/// Bits dropped in the model's training data, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cdc_model_bits(model: *const CdcModel) -> u32 {
    model.as_ref().map_or(0, |m| m.bits)
}

/// Learned reconstruction into a caller buffer of at least `3 * width * height` bytes.
///
/// # Safety
/// `model` and `packed` must be live handles and `rgb_out` writable for `rgb_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cdc_model_reconstruct(
    model: *mut CdcModel,
    packed: *const CdcPacked,
    rgb_out: *mut u8,
    rgb_len: usize,
) -> CdcStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let p = packed.as_ref().ok_or_else(|| null("packed"))?;
        let need = 3 * p.0.width() as usize * p.0.height() as usize;
        let out = slice_mut(rgb_out, rgb_len, need)?;
        let img = reconstruct(&mut m.gen, &codec::decompress_naive(&p.0)).or_status()?;
        write_rgb(&img, out);
        Ok(())
    })
}

/// # Safety
/// `packed` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdc_packed_free(packed: *mut CdcPacked) {
    if !packed.is_null() {
        drop(Box::from_raw(packed));
    }
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cdc_model_free(model: *mut CdcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Releases bytes returned by [`cdc_encode`].
///
/// # Safety
/// `ptr` and `len` must come from one [`cdc_encode`] call, or `ptr` must be null.
#[no_mangle]
pub unsafe extern "C" fn cdc_bytes_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)));
    }
}
