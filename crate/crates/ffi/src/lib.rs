//! C ABI for loading `invsent` checkpoints and encoding sentences.
//!
//! Every fallible function returns an [`InvsentStatus`]. On failure a
//! message is kept per thread and can be read with
//! [`invsent_last_error_message`]. Models are opaque handles created by
//! [`invsent_model_load`] and released with [`invsent_model_free`].
//!
//! Representation sources and poolings are passed as the `INVSENT_SOURCE_*`
//! and `INVSENT_POOLING_*` constants.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use invsent::checkpoint::Checkpoint;
use invsent::decoders::orthonormality_error;
use invsent::encoder::Pooling;
use invsent::evaluation::known_ids;
use invsent::representation::{encode_dataset, RepresentationSpec, Source};
use invsent::Error;

pub const INVSENT_SOURCE_EN: u32 = 0;
pub const INVSENT_SOURCE_DE: u32 = 1;
pub const INVSENT_SOURCE_ENSEMBLE_AVG: u32 = 2;
pub const INVSENT_SOURCE_ENSEMBLE_CONCAT: u32 = 3;
pub const INVSENT_SOURCE_PROJECTED: u32 = 4;

pub const INVSENT_POOLING_MEAN: u32 = 0;
pub const INVSENT_POOLING_CONCAT3: u32 = 1;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvsentStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// A string argument is not valid UTF-8.
    Utf8 = 3,
    Io = 4,
    /// Malformed input text, or a sentence with no known words.
    Parse = 5,
    Checkpoint = 6,
    /// The output buffer is too small; the required length was written.
    BufferTooSmall = 7,
    Numeric = 8,
    Failed = 9,
    Panic = 10,
}

/// A loaded checkpoint.
pub struct InvsentModel {
    ck: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(InvsentStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => InvsentStatus::Io,
            Error::Parse { .. } => InvsentStatus::Parse,
            Error::Checkpoint(_) => InvsentStatus::Checkpoint,
            Error::Config(_) | Error::InvalidId { .. } | Error::Shape(_) | Error::EmptyInput(_) => {
                InvsentStatus::InvalidArgument
            }
            Error::NonFinite { .. } => InvsentStatus::Numeric,
            _ => InvsentStatus::Failed,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: InvsentStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> InvsentStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InvsentStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            InvsentStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const InvsentModel) -> Result<&'a InvsentModel, Failure> {
    // SAFETY: the caller passes null or a live handle from invsent_model_load.
    unsafe { model.as_ref() }.ok_or_else(|| fail(InvsentStatus::NullPointer, "model is null"))
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(fail(InvsentStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: the caller passes a NUL-terminated string.
    unsafe { CStr::from_ptr(s) }
        .to_str()
        .map_err(|_| fail(InvsentStatus::Utf8, format!("{what} is not valid UTF-8")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<*mut T, Failure> {
    if p.is_null() {
        Err(fail(InvsentStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(p)
    }
}

fn source_arg(source: u32) -> Result<Source, Failure> {
    Ok(match source {
        INVSENT_SOURCE_EN => Source::En,
        INVSENT_SOURCE_DE => Source::De,
        INVSENT_SOURCE_ENSEMBLE_AVG => Source::EnsembleAvg,
        INVSENT_SOURCE_ENSEMBLE_CONCAT => Source::EnsembleConcat,
        INVSENT_SOURCE_PROJECTED => Source::Projected,
        other => return Err(fail(InvsentStatus::InvalidArgument, format!("unknown source {other}"))),
    })
}

fn pooling_arg(pooling: u32) -> Result<Pooling, Failure> {
    match pooling {
        INVSENT_POOLING_MEAN => Ok(Pooling::Mean),
        INVSENT_POOLING_CONCAT3 => Ok(Pooling::Concat3),
        other => Err(fail(InvsentStatus::InvalidArgument, format!("unknown pooling {other}"))),
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn invsent_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn invsent_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads the checkpoint at `path` into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn invsent_model_load(path: *const c_char, out: *mut *mut InvsentModel) -> InvsentStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        // SAFETY: out is non-null per the contract above.
        unsafe { *out = ptr::null_mut() };
        let path = unsafe { str_arg(path, "path") }?;
        let ck = Checkpoint::load(Path::new(path))?;
        let handle = Box::into_raw(Box::new(InvsentModel { ck }));
        unsafe { *out = handle };
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or come from [`invsent_model_load`] and not have
/// been freed.
#[no_mangle]
pub unsafe extern "C" fn invsent_model_free(model: *mut InvsentModel) {
    if !model.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Writes the code width `2d` and the word-vector width `d_v`.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn invsent_model_dims(
    model: *const InvsentModel,
    code_dim: *mut usize,
    word_dim: *mut usize,
) -> InvsentStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let (c, w) = (out_arg(code_dim, "code_dim")?, out_arg(word_dim, "word_dim")?);
        unsafe {
            *c = m.ck.model.code_dim();
            *w = m.ck.model.word_dim();
        }
        Ok(())
    })
}

/// Number of floats one sentence encodes to under `source` and `pooling`.
///
/// # Safety
/// `model` must be a live handle; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invsent_representation_len(
    model: *const InvsentModel,
    source: u32,
    pooling: u32,
    len: *mut usize,
) -> InvsentStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let n = source_arg(source)?.output_len(pooling_arg(pooling)?, m.ck.model.code_dim(), m.ck.model.word_dim());
        unsafe { *out_arg(len, "len")? = n };
        Ok(())
    })
}

/// `‖WWᵀ − I‖_F` of the decoder projection.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invsent_orthonormality_error(model: *const InvsentModel, out: *mut f64) -> InvsentStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        unsafe { *out_arg(out, "out")? = orthonormality_error(&m.ck.model.decoder.linear().w) };
        Ok(())
    })
}

/// Encodes `count` sentences into `out`, row-major, `count * len` floats
/// where `len` is [`invsent_representation_len`]. With `postprocess` set
/// the top singular direction over the batch is removed per source.
///
/// When `capacity` is too small the required float count is written to
/// `written` and [`InvsentStatus::BufferTooSmall`] is returned.
///
/// # Safety
/// `model` must be a live handle, `sentences` must point to `count`
/// NUL-terminated strings, `out` to `capacity` writable floats and
/// `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn invsent_encode(
    model: *const InvsentModel,
    sentences: *const *const c_char,
    count: usize,
    source: u32,
    pooling: u32,
    postprocess: bool,
    out: *mut f32,
    capacity: usize,
    written: *mut usize,
) -> InvsentStatus {
    guard(|| {
        let m = unsafe { model_ref(model) }?;
        let written = out_arg(written, "written")?;
        unsafe { *written = 0 };
        let spec = RepresentationSpec {
            source: source_arg(source)?,
            pooling: pooling_arg(pooling)?,
            postprocess,
        };
        if count == 0 {
            return Err(fail(InvsentStatus::InvalidArgument, "no sentences"));
        }
        let sentences = out_arg(sentences.cast_mut(), "sentences")?;
        let len = spec.source.output_len(spec.pooling, m.ck.model.code_dim(), m.ck.model.word_dim());
        let need = len * count;
        if capacity < need {
            unsafe { *written = need };
            return Err(fail(
                InvsentStatus::BufferTooSmall,
                format!("need {need} floats, have {capacity}"),
            ));
        }
        let out = out_arg(out, "out")?;
        let mut ids = Vec::with_capacity(count);
        for i in 0..count {
            // SAFETY: sentences holds count pointers.
            let text = unsafe { str_arg(*sentences.add(i), "sentence") }?;
            ids.push(known_ids(&m.ck.vocab, text, Path::new("<input>"), i + 1)?);
        }
        let rows = encode_dataset(&m.ck.model, &m.ck.vectors, &ids, spec)?;
        // SAFETY: out holds capacity >= need floats.
        let dst = unsafe { std::slice::from_raw_parts_mut(out, need) };
        for (chunk, row) in dst.chunks_exact_mut(len).zip(&rows) {
            chunk.copy_from_slice(row);
        }
        unsafe { *written = need };
        Ok(())
    })
}
