//! C ABI over [`personaforge::pipeline::Pipeline`].
//!
//! Every call returns a [`PfStatus`]. On failure the message is kept per
//! thread and read with [`pf_last_error`]. Results are JSON strings owned by
//! the caller and released with [`pf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use personaforge::feedback::FeedbackRecord;
use personaforge::pipeline::{Pipeline, PipelineConfig};
use personaforge::service::views::{CloseSummary, FeedbackRequest, InferResponse, RoundView};
use personaforge::Error;
use serde::Serialize;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Invalid = 3,
    NotFound = 4,
    Conflict = 5,
    InsufficientData = 6,
    NotTrained = 7,
    Unavailable = 8,
    Io = 9,
    Internal = 10,
    Panic = 11,
}

/// Opaque pipeline handle.
pub struct PfPipeline {
    inner: Arc<Pipeline>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PfStatus {
    match e {
        Error::Invalid { .. } => PfStatus::Invalid,
        Error::NotFound(_) => PfStatus::NotFound,
        Error::Conflict(_) => PfStatus::Conflict,
        Error::InsufficientData(_) => PfStatus::InsufficientData,
        Error::NotTrained(_) => PfStatus::NotTrained,
        Error::Unavailable(_) => PfStatus::Unavailable,
        Error::Io(_) => PfStatus::Io,
        _ => PfStatus::Internal,
    }
}

struct Fail(PfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(PfStatus::Invalid, e.to_string())
    }
}

/// Runs `f`, recording its error or panic for [`pf_last_error`].
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PfStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside personaforge".into());
            PfStatus::Panic
        }
    }
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn text<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(PfStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PfStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` is null or a valid NUL-terminated string.
unsafe fn optional_text<'a>(p: *const c_char, name: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        text(p, name).map(Some)
    }
}

unsafe fn handle<'a>(h: *const PfPipeline) -> Result<&'a Arc<Pipeline>, Fail> {
    h.as_ref()
        .map(|h| &h.inner)
        .ok_or_else(|| Fail(PfStatus::NullArgument, "pipeline handle is null".into()))
}

/// # Safety
/// `out` is null or valid for writes.
unsafe fn emit(out: *mut *mut c_char, value: &impl Serialize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail(PfStatus::NullArgument, "output pointer is null".into()));
    }
    let json = serde_json::to_string(value)?;
    *out = CString::new(json)
        .map_err(|e| Fail(PfStatus::Internal, e.to_string()))?
        .into_raw();
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Opens (or creates) a store at `data_dir`. `config_path` may be null for
/// the default configuration.
///
/// # Safety
/// String arguments are null or NUL-terminated; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pf_pipeline_open(
    data_dir: *const c_char,
    config_path: *const c_char,
    out: *mut *mut PfPipeline,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail(PfStatus::NullArgument, "output pointer is null".into()));
        }
        let dir = text(data_dir, "data_dir")?;
        let config = match optional_text(config_path, "config_path")? {
            Some(p) => PipelineConfig::load(Path::new(p))?,
            None => PipelineConfig::default(),
        };
        let inner = Arc::new(Pipeline::open(dir, config)?);
        *out = Box::into_raw(Box::new(PfPipeline { inner }));
        Ok(())
    })
}

/// # Safety
/// `h` is null or was returned by [`pf_pipeline_open`] and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pf_pipeline_free(h: *mut PfPipeline) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Either directory may be null. Writes the ingest summary.
///
/// # Safety
/// `h` is a live handle; strings are null or NUL-terminated; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn pf_ingest(
    h: *const PfPipeline,
    brand_dir: *const c_char,
    user_dir: *const c_char,
    out: *mut *mut c_char,
) -> PfStatus {
    guard(|| {
        let p = handle(h)?;
        let brands = optional_text(brand_dir, "brand_dir")?.map(Path::new);
        let users = optional_text(user_dir, "user_dir")?.map(Path::new);
        emit(out, &p.ingest(brands, users)?)
    })
}

/// # Safety
/// `h` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pf_train_profiler(h: *const PfPipeline, out: *mut *mut c_char) -> PfStatus {
    guard(|| emit(out, &handle(h)?.train_profiler()?))
}

/// # Safety
/// `h` is a live handle; `industry` is NUL-terminated; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn pf_train_generator(
    h: *const PfPipeline,
    industry: *const c_char,
    out: *mut *mut c_char,
) -> PfStatus {
    guard(|| {
        let p = handle(h)?;
        emit(out, &p.train_generator(text(industry, "industry")?)?)
    })
}

/// `user` is an id or a handle.
///
/// # Safety
/// `h` is a live handle; `user` is NUL-terminated; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn pf_infer(h: *const PfPipeline, user: *const c_char, out: *mut *mut c_char) -> PfStatus {
    guard(|| {
        let p = handle(h)?;
        let id = p.find_user(text(user, "user")?, None)?.id;
        let (id, payload) = p.infer(&id)?;
        emit(out, &InferResponse::new(id, payload))
    })
}

/// Writes the round as served to clients.
///
/// # Safety
/// `h` is a live handle; strings are NUL-terminated; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn pf_generate(
    h: *const PfPipeline,
    user_id: *const c_char,
    industry: *const c_char,
    num_variants: usize,
    out: *mut *mut c_char,
) -> PfStatus {
    guard(|| {
        let p = handle(h)?;
        let round = p.generate(text(user_id, "user_id")?, text(industry, "industry")?, num_variants)?;
        emit(out, &RoundView::new(&round, &[]))
    })
}

/// `feedback_json` has the same fields as the HTTP feedback request.
///
/// # Safety
/// `h` is a live handle; `feedback_json` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn pf_submit_feedback(h: *const PfPipeline, feedback_json: *const c_char) -> PfStatus {
    guard(|| {
        let p = handle(h)?;
        let req: FeedbackRequest = serde_json::from_str(text(feedback_json, "feedback_json")?)?;
        let timestamp = req.timestamp.unwrap_or_else(|| p.store().snapshot().clock);
        p.submit_feedback(FeedbackRecord {
            round_id: req.round_id,
            card_id: req.card_id,
            attractiveness: req.attractiveness,
            preference: req.preference,
            compliance: req.compliance,
            would_click: req.would_click,
            timestamp,
        })?;
        Ok(())
    })
}

/// # Safety
/// `h` is a live handle; `round_id` is NUL-terminated; `out` is valid.
#[no_mangle]
pub unsafe extern "C" fn pf_close_round(
    h: *const PfPipeline,
    round_id: *const c_char,
    out: *mut *mut c_char,
) -> PfStatus {
    guard(|| {
        let p = handle(h)?;
        let (settlement, manifest) = p.close_round(text(round_id, "round_id")?)?;
        emit(out, &CloseSummary::new(&settlement, manifest))
    })
}

/// Advances the logical clock. Retrain jobs started by the tick run in the
/// background.
///
/// # Safety
/// `h` is a live handle; `out` is valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pf_tick(h: *const PfPipeline, hours: u64, out: *mut *mut c_char) -> PfStatus {
    guard(|| emit(out, &handle(h)?.tick(hours)?))
}
