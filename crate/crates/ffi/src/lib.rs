//! C interface to the keyword spotting engine.
//!
//! Handles are opaque. Every function returns a [`KwsStatus`]; on failure the
//! message is available from [`kws_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use kws_core::config::CliConfig;
use kws_core::posterior::PosteriorStream;
use kws_core::{Detection, Engine, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KwsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Config = 4,
    InvalidStream = 5,
    Decode = 6,
    OutOfRange = 7,
    Panic = 99,
}

/// A loaded engine: inventory, compiled graph and pipeline settings.
pub struct KwsEngine {
    engine: Engine,
}

/// Detections from one run. Keyword strings live as long as the handle.
pub struct KwsDetections {
    items: Vec<Detection>,
    keywords: Vec<CString>,
    frame_duration: f32,
}

/// One detection. Absent scores are NaN; absent frames are -1.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KwsDetection {
    pub keyword: *const c_char,
    pub t0_frame: i64,
    pub t_r_frame: i64,
    pub t_end_frame: i64,
    pub t0_s: f64,
    pub t_r_s: f64,
    pub t_end_s: f64,
    pub detect_cost: f64,
    pub s1: f64,
    pub s2: f64,
    pub final_stage_passed: u8,
    pub accepted: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(KwsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn status_of(e: &Error) -> KwsStatus {
    match e {
        Error::Io { .. } => KwsStatus::Io,
        Error::File { source, .. } => status_of(source),
        Error::Stream(_) | Error::StreamMismatch(_) => KwsStatus::InvalidStream,
        Error::Detect(_) | Error::Align(_) | Error::Verify(_) => KwsStatus::Decode,
        _ => KwsStatus::Config,
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KwsStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let what = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(KwsStatus::Panic, format!("panic: {what}")))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            KwsStatus::Ok
        }
        Err(Failure(status, message)) => {
            set_last_error(message);
            status
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(KwsStatus::NullArgument, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure(KwsStatus::InvalidUtf8, format!("{what} is not UTF-8")))?;
    Ok(Path::new(s))
}

fn load_stream(path: &Path) -> Result<PosteriorStream, Failure> {
    PosteriorStream::load(path)
        .map_err(|e| Failure(KwsStatus::InvalidStream, format!("{}: {e}", path.display())))
}

unsafe fn stream_arg(
    values: *const f32,
    frames: usize,
    units: usize,
    frame_duration: f32,
    what: &str,
) -> Result<PosteriorStream, Failure> {
    if values.is_null() {
        return Err(null(what));
    }
    let len = frames
        .checked_mul(units)
        .ok_or_else(|| Failure(KwsStatus::OutOfRange, format!("{what}: size overflows")))?;
    let data = unsafe { std::slice::from_raw_parts(values, len) }.to_vec();
    PosteriorStream::new(units, data, frame_duration)
        .map_err(|e| Failure(KwsStatus::InvalidStream, format!("{what}: {e}")))
}

fn wrap(items: Vec<Detection>, frame_duration: f32) -> Box<KwsDetections> {
    let keywords = items
        .iter()
        .map(|d| CString::new(d.keyword.as_str()).expect("keyword names contain no nul"))
        .collect();
    Box::new(KwsDetections {
        items,
        keywords,
        frame_duration,
    })
}

/// Loads a TOML run configuration and builds an engine.
///
/// # Safety
/// `config_path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kws_engine_new_from_config(
    config_path: *const c_char,
    out: *mut *mut KwsEngine,
) -> KwsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = unsafe { path_arg(config_path, "config_path") }?;
        let engine = CliConfig::load(path)?.engine()?;
        unsafe { *out = Box::into_raw(Box::new(KwsEngine { engine })) };
        Ok(())
    })
}

/// # Safety
/// `engine` must come from [`kws_engine_new_from_config`] or be null.
#[no_mangle]
pub unsafe extern "C" fn kws_engine_free(engine: *mut KwsEngine) {
    if !engine.is_null() {
        drop(unsafe { Box::from_raw(engine) });
    }
}

/// Number of units each posterior frame must carry.
///
/// # Safety
/// `engine` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn kws_engine_num_units(
    engine: *const KwsEngine,
    out: *mut usize,
) -> KwsStatus {
    guard(|| {
        let engine = unsafe { engine.as_ref() }.ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { *out = engine.engine.phones.len() };
        Ok(())
    })
}

/// Runs the cascade over a pair of posterior files.
///
/// # Safety
/// `engine` must be a live handle, the paths nul-terminated strings and
/// `out` a writable pointer. The result must be released with
/// [`kws_detections_free`].
#[no_mangle]
pub unsafe extern "C" fn kws_engine_run_files(
    engine: *const KwsEngine,
    det_path: *const c_char,
    ali_path: *const c_char,
    out: *mut *mut KwsDetections,
) -> KwsStatus {
    guard(|| {
        let engine = unsafe { engine.as_ref() }.ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let det = load_stream(unsafe { path_arg(det_path, "det_path") }?)?;
        let ali = load_stream(unsafe { path_arg(ali_path, "ali_path") }?)?;
        let items = engine.engine.run(&det, &ali)?;
        unsafe { *out = Box::into_raw(wrap(items, det.frame_duration())) };
        Ok(())
    })
}

/// Runs the cascade over row-major `frames x num_units` buffers.
///
/// # Safety
/// `engine` must be a live handle, each buffer must hold
/// `frames * num_units` floats and `out` must be writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn kws_engine_run_buffers(
    engine: *const KwsEngine,
    det: *const f32,
    det_frames: usize,
    ali: *const f32,
    ali_frames: usize,
    num_units: usize,
    frame_duration: f32,
    out: *mut *mut KwsDetections,
) -> KwsStatus {
    guard(|| {
        let engine = unsafe { engine.as_ref() }.ok_or_else(|| null("engine"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let det = unsafe { stream_arg(det, det_frames, num_units, frame_duration, "det") }?;
        let ali = unsafe { stream_arg(ali, ali_frames, num_units, frame_duration, "ali") }?;
        let items = engine.engine.run(&det, &ali)?;
        unsafe { *out = Box::into_raw(wrap(items, frame_duration)) };
        Ok(())
    })
}

/// # Safety
/// `detections` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn kws_detections_len(detections: *const KwsDetections) -> usize {
    unsafe { detections.as_ref() }.map_or(0, |d| d.items.len())
}

/// Copies detection `index` into `out`. The keyword pointer stays valid
/// until the handle is freed.
///
/// # Safety
/// `detections` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kws_detections_get(
    detections: *const KwsDetections,
    index: usize,
    out: *mut KwsDetection,
) -> KwsStatus {
    guard(|| {
        let ds = unsafe { detections.as_ref() }.ok_or_else(|| null("detections"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = ds.items.get(index).ok_or_else(|| {
            Failure(
                KwsStatus::OutOfRange,
                format!(
                    "index {index} out of range for {} detections",
                    ds.items.len()
                ),
            )
        })?;
        let secs = |f: usize| f as f64 * ds.frame_duration as f64;
        unsafe {
            *out = KwsDetection {
                keyword: ds.keywords[index].as_ptr(),
                t0_frame: d.t0 as i64,
                t_r_frame: d.t_r.map_or(-1, |t| t as i64),
                t_end_frame: d.t_end as i64,
                t0_s: secs(d.t0),
                t_r_s: d.t_r.map_or(f64::NAN, secs),
                t_end_s: secs(d.t_end),
                detect_cost: d.detect_cost,
                s1: d.s1.unwrap_or(f64::NAN),
                s2: d.s2.unwrap_or(f64::NAN),
                final_stage_passed: d.final_stage_passed,
                accepted: d.accepted,
            }
        };
        Ok(())
    })
}

/// # Safety
/// `detections` must come from a run function or be null.
#[no_mangle]
pub unsafe extern "C" fn kws_detections_free(detections: *mut KwsDetections) {
    if !detections.is_null() {
        drop(unsafe { Box::from_raw(detections) });
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn kws_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}
