//! C ABI over the protocol core.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`AibaError`] code; `AIBA_ERROR_OK` is 0.
//!   After a failure, [`aiba_last_error_message`] describes it.
//! * Objects are opaque handles created by `*_new` / `*_parse` functions and
//!   released with the matching `*_free`. Passing NULL to a `*_free` is a no-op.
//! * Strings returned through `out` parameters are NUL-terminated UTF-8 owned
//!   by the caller; release them with [`aiba_string_free`].
//! * Timestamps are milliseconds since the Unix epoch, UTC.
//! * Structured values (prompt steps, status documents, answers) cross the
//!   boundary as JSON text.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use aiba::protocol::{
    covid_question_set, next_prompt, parse_runtime_config, register_recording, reset_counts, select_list,
    should_upload_status, start_over, validate_personal_info, AnswerValue, LocalConfigStatus, PhoneHash,
    RecordingMode, RuntimeConfig, SessionState,
};
use chrono::{DateTime, Utc};
use rand::rngs::StdRng;
use rand::SeedableRng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AibaError {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidSession = 4,
    InvalidDocument = 5,
    Exhausted = 6,
    InvalidArgument = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AibaRecordingMode {
    Guided = 0,
    FreeRecording = 1,
    TextOnly = 2,
}

/// Parsed runtime config.
pub struct AibaConfig(RuntimeConfig);

/// Prompt session state.
pub struct AibaSession(SessionState);

/// The phone's local status document.
pub struct AibaStatus(LocalConfigStatus);

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

struct Failure(AibaError, String);

fn set_last_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AibaError {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AibaError::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic".to_owned());
            AibaError::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(AibaError::NullPointer, format!("{what} is NULL"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn borrow_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(AibaError::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|e| Failure(AibaError::InvalidArgument, e.to_string()))?;
    put(out, c.into_raw(), "out")
}

fn timestamp(ms: i64) -> Result<DateTime<Utc>, Failure> {
    DateTime::from_timestamp_millis(ms)
        .ok_or_else(|| Failure(AibaError::InvalidArgument, format!("timestamp {ms} out of range")))
}

macro_rules! to_json {
    ($v:expr) => {
        serde_json::to_string($v).expect("value serializes")
    };
}

/// Message for the last failure on this thread, or NULL if none. Free with
/// [`aiba_string_free`].
#[no_mangle]
pub extern "C" fn aiba_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_deref() {
        Some(msg) => CString::new(msg.replace('\0', " "))
            .map(CString::into_raw)
            .unwrap_or(ptr::null_mut()),
        None => ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aiba_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a runtime config document of `len` bytes. An empty or
/// whitespace-only document selects free recording.
///
/// # Safety
/// `bytes` must point to `len` readable bytes (may be NULL when `len` is 0);
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_config_parse(
    bytes: *const u8,
    len: usize,
    expected_number: u32,
    out: *mut *mut AibaConfig,
) -> AibaError {
    guard(|| {
        let raw: &[u8] = if len == 0 {
            &[]
        } else if bytes.is_null() {
            return Err(null("bytes"));
        } else {
            std::slice::from_raw_parts(bytes, len)
        };
        let config = parse_runtime_config(raw, expected_number)
            .map_err(|e| Failure(AibaError::InvalidConfig, e.to_string()))?;
        put(out, Box::into_raw(Box::new(AibaConfig(config))), "out")
    })
}

/// # Safety
/// `config` must be NULL or a handle from [`aiba_config_parse`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn aiba_config_free(config: *mut AibaConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_config_mode(config: *const AibaConfig, out: *mut AibaRecordingMode) -> AibaError {
    guard(|| {
        let mode = match borrow(config, "config")?.0.mode {
            RecordingMode::Guided => AibaRecordingMode::Guided,
            RecordingMode::FreeRecording => AibaRecordingMode::FreeRecording,
            RecordingMode::TextOnly => AibaRecordingMode::TextOnly,
        };
        put(out, mode, "out")
    })
}

/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_config_list_count(config: *const AibaConfig, out: *mut usize) -> AibaError {
    guard(|| put(out, borrow(config, "config")?.0.lists.len(), "out"))
}

/// Canonical serialization of the config.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_config_to_json(config: *const AibaConfig, out: *mut *mut c_char) -> AibaError {
    guard(|| {
        let bytes = borrow(config, "config")?.0.to_canonical_bytes();
        put_string(out, String::from_utf8(bytes).expect("canonical form is UTF-8"))
    })
}

/// Starts a session for the phone whose hash is `phone_hash` (32 lowercase
/// hex digits).
///
/// # Safety
/// `phone_hash` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_session_new(
    phone_hash: *const c_char,
    now_ms: i64,
    out: *mut *mut AibaSession,
) -> AibaError {
    guard(|| {
        let hash: PhoneHash = c_str(phone_hash, "phone_hash")?
            .parse()
            .map_err(|e: aiba::protocol::PhoneHashError| Failure(AibaError::InvalidArgument, e.to_string()))?;
        let session = SessionState::new(hash, timestamp(now_ms)?);
        put(out, Box::into_raw(Box::new(AibaSession(session))), "out")
    })
}

/// # Safety
/// `session` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aiba_session_free(session: *mut AibaSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// # Safety
/// `session` and `config` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn aiba_session_select_list(
    session: *mut AibaSession,
    config: *const AibaConfig,
    index: usize,
) -> AibaError {
    guard(|| {
        let session = borrow_mut(session, "session")?;
        let config = borrow(config, "config")?;
        session.0 = select_list(&session.0, &config.0, index)
            .map_err(|e| Failure(AibaError::InvalidSession, e.to_string()))?;
        Ok(())
    })
}

/// The step to show next, as JSON: `{"kind":"record","text":..,"seconds":..}`,
/// `{"kind":"text_only","text":..}`, `{"kind":"terminal","text":..}` or
/// `{"kind":"free"}`.
///
/// # Safety
/// `session` and `config` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_session_next_prompt(
    session: *const AibaSession,
    config: *const AibaConfig,
    out: *mut *mut c_char,
) -> AibaError {
    guard(|| {
        let step = next_prompt(&borrow(session, "session")?.0, &borrow(config, "config")?.0)
            .map_err(|e| Failure(AibaError::InvalidSession, e.to_string()))?;
        put_string(out, to_json!(&step))
    })
}

/// Records a completed recording: advances the session and bumps the
/// status counter.
///
/// # Safety
/// All handles must be live.
#[no_mangle]
pub unsafe extern "C" fn aiba_session_register_recording(
    session: *mut AibaSession,
    status: *mut AibaStatus,
    config: *const AibaConfig,
    now_ms: i64,
) -> AibaError {
    guard(|| {
        let now = timestamp(now_ms)?;
        let session = borrow_mut(session, "session")?;
        let status = borrow_mut(status, "status")?;
        let config = borrow(config, "config")?;
        let (s, st) = register_recording(&session.0, &status.0, &config.0, now);
        session.0 = s;
        status.0 = st;
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn aiba_session_start_over(session: *mut AibaSession) -> AibaError {
    guard(|| {
        let session = borrow_mut(session, "session")?;
        session.0 = start_over(&session.0);
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_session_cursor(session: *const AibaSession, out: *mut usize) -> AibaError {
    guard(|| put(out, borrow(session, "session")?.0.cursor, "out"))
}

/// A fresh status document with defaults.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_new(out: *mut *mut AibaStatus) -> AibaError {
    guard(|| put(out, Box::into_raw(Box::new(AibaStatus(LocalConfigStatus::default()))), "out"))
}

/// Loads and validates a status document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_from_json(json: *const c_char, out: *mut *mut AibaStatus) -> AibaError {
    guard(|| {
        let status: LocalConfigStatus = serde_json::from_str(c_str(json, "json")?)
            .map_err(|e| Failure(AibaError::InvalidDocument, e.to_string()))?;
        status
            .validate()
            .map_err(|e| Failure(AibaError::InvalidDocument, e.to_string()))?;
        put(out, Box::into_raw(Box::new(AibaStatus(status))), "out")
    })
}

/// # Safety
/// `status` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_to_json(status: *const AibaStatus, out: *mut *mut c_char) -> AibaError {
    guard(|| put_string(out, to_json!(&borrow(status, "status")?.0)))
}

/// # Safety
/// `status` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_free(status: *mut AibaStatus) {
    if !status.is_null() {
        drop(Box::from_raw(status));
    }
}

/// # Safety
/// `status` must be a live handle; the outs must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_counts(
    status: *const AibaStatus,
    total: *mut u64,
    current: *mut u64,
) -> AibaError {
    guard(|| {
        let s = &borrow(status, "status")?.0;
        put(total, s.total_count, "total")?;
        put(current, s.current_count, "current")
    })
}

/// Folds the current count into the total and zeroes it.
///
/// # Safety
/// `status` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_reset_counts(status: *mut AibaStatus) -> AibaError {
    guard(|| {
        let status = borrow_mut(status, "status")?;
        status.0 = reset_counts(&status.0);
        Ok(())
    })
}

/// # Safety
/// `status` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_should_upload(
    status: *const AibaStatus,
    now_ms: i64,
    out: *mut bool,
) -> AibaError {
    guard(|| {
        let now = timestamp(now_ms)?;
        put(out, should_upload_status(&borrow(status, "status")?.0, now), "out")
    })
}

/// Marks the status as uploaded at `now_ms`.
///
/// # Safety
/// `status` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_mark_uploaded(status: *mut AibaStatus, now_ms: i64) -> AibaError {
    guard(|| {
        let now = timestamp(now_ms)?;
        borrow_mut(status, "status")?.0.mark_uploaded(now);
        Ok(())
    })
}

/// Draws a new neighbor code, distinct from the ones already generated,
/// records it in the status and returns it. `seed` feeds the generator.
///
/// # Safety
/// `status` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_status_generate_neighbor_code(
    status: *mut AibaStatus,
    seed: u64,
    out: *mut *mut c_char,
) -> AibaError {
    guard(|| {
        let status = borrow_mut(status, "status")?;
        let mut rng = StdRng::seed_from_u64(seed);
        let code = status
            .0
            .add_generated_neighbor_code(&mut rng)
            .map_err(|e| Failure(AibaError::Exhausted, e.to_string()))?;
        put_string(out, code)
    })
}

/// Validates a JSON object of personal-information answers against the
/// built-in question set and returns the normalized answers (ages of 90 and
/// over become `"90+"`).
///
/// # Safety
/// `answers_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_validate_personal_info(
    answers_json: *const c_char,
    out: *mut *mut c_char,
) -> AibaError {
    guard(|| {
        let answers: BTreeMap<String, AnswerValue> = serde_json::from_str(c_str(answers_json, "answers_json")?)
            .map_err(|e| Failure(AibaError::InvalidDocument, e.to_string()))?;
        let normalized = validate_personal_info(&answers, &covid_question_set()).map_err(|violations| {
            let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Failure(AibaError::InvalidDocument, msgs.join("; "))
        })?;
        put_string(out, to_json!(&normalized))
    })
}

/// The built-in personal-information question set as JSON.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn aiba_personal_info_schema(out: *mut *mut c_char) -> AibaError {
    guard(|| put_string(out, to_json!(&covid_question_set())))
}
