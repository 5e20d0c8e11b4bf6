//! C interface to the urag engine. The header is generated into
//! `include/urag.h` at build time.
//!
//! Conventions:
//! - Every fallible function returns a [`UragStatus`]; on failure the message
//!   is available from [`urag_last_error_message`] on the same thread.
//! - Strings are UTF-8 and NUL-terminated. Strings returned through `out`
//!   parameters are owned by the caller and released with [`urag_string_free`].
//! - A [`UragEngine`] may be shared between threads; `urag_engine_ask` and
//!   `urag_engine_reload` can run concurrently.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use urag::config::AppConfig;
use urag::engine::{Engine, EngineError, Providers};
use urag::eval::{Judgment, Rank, RankedResult};
use urag::model::EmbeddingVector;
use urag::router::RouterError;
use urag::store::Store;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UragStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Store = 5,
    Provider = 6,
    Internal = 7,
}

/// Opaque engine handle.
pub struct UragEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type Failure = (UragStatus, String);

/// Runs `f`, recording its error and converting panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> UragStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UragStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            UragStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err((UragStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (UragStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err((UragStatus::NullArgument, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err((UragStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    let mut bytes = s.into_bytes();
    bytes.retain(|&b| b != 0);
    CString::new(bytes).expect("NUL bytes removed").into_raw()
}

fn engine_status(e: &EngineError) -> UragStatus {
    match e {
        EngineError::Store(_) | EngineError::KnowledgeBase(_) => UragStatus::Store,
        EngineError::Embedding(_) => UragStatus::Provider,
    }
}

fn load_config(store_dir: &Path, config_path: Option<&str>) -> Result<AppConfig, Failure> {
    let path = match config_path {
        Some(p) => Some(PathBuf::from(p)),
        None => Some(store_dir.join("urag.toml")).filter(|p| p.exists()),
    };
    let config = AppConfig::load(path.as_deref()).map_err(|e| (UragStatus::Config, e.to_string()))?;
    config.validate().map_err(|e| (UragStatus::Config, e.to_string()))?;
    Ok(config)
}

/// Opens the store at `store_dir`. `config_path` may be null, in which case
/// `<store_dir>/urag.toml` is used when present. With `mock_providers` the
/// deterministic offline providers are used; otherwise endpoints come from
/// the `URAG_EMBED_*` and `URAG_GEN_*` environment variables.
///
/// # Safety
/// `store_dir` and a non-null `config_path` must be valid C strings; `out`
/// must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urag_engine_open(
    store_dir: *const c_char,
    config_path: *const c_char,
    mock_providers: bool,
    out: *mut *mut UragEngine,
) -> UragStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let dir = PathBuf::from(str_arg(store_dir, "store_dir")?);
        let config_path = if config_path.is_null() { None } else { Some(str_arg(config_path, "config_path")?) };
        let config = load_config(&dir, config_path)?;
        let providers = Providers::from_config(&config, mock_providers);
        let engine = Engine::open(config, Store::new(dir), providers).map_err(|e| (engine_status(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(UragEngine { engine }));
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from [`urag_engine_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn urag_engine_free(engine: *mut UragEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Answers `question`. On success `*out_json` receives the answer envelope
/// as JSON: `query`, `answer_text`, `tier`, `matches`, `disclaimer_applied`,
/// `latency_ms`.
///
/// # Safety
/// `engine` must be a live handle, `question` a valid C string and
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urag_engine_ask(
    engine: *const UragEngine,
    question: *const c_char,
    out_json: *mut *mut c_char,
) -> UragStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        *out_json = ptr::null_mut();
        let engine = engine.as_ref().ok_or((UragStatus::NullArgument, "engine is null".to_owned()))?;
        let question = str_arg(question, "question")?;
        let env = engine.engine.answer(question).map_err(|e| {
            let status = match e {
                RouterError::EmptyQuery => UragStatus::InvalidArgument,
                RouterError::Embedding(_) | RouterError::Generation(_) => UragStatus::Provider,
                _ => UragStatus::Internal,
            };
            (status, e.to_string())
        })?;
        let json = serde_json::to_string(&env).map_err(|e| (UragStatus::Internal, e.to_string()))?;
        *out_json = into_c_string(json);
        Ok(())
    })
}

/// Re-reads the store and swaps the engine's snapshot.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn urag_engine_reload(engine: *const UragEngine) -> UragStatus {
    guard(|| {
        let engine = engine.as_ref().ok_or((UragStatus::NullArgument, "engine is null".to_owned()))?;
        engine.engine.reload().map(|_| ()).map_err(|e| (engine_status(&e), e.to_string()))
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn urag_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn urag_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` floats; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urag_cosine(a: *const f32, b: *const f32, len: usize, out: *mut f64) -> UragStatus {
    guard(|| {
        out_arg(out, "out")?;
        let invalid = |e: String| (UragStatus::InvalidArgument, e);
        let a = EmbeddingVector::new(slice_arg(a, len, "a")?.to_vec()).map_err(|e| invalid(e.to_string()))?;
        let b = EmbeddingVector::new(slice_arg(b, len, "b")?.to_vec()).map_err(|e| invalid(e.to_string()))?;
        *out = urag::index::cosine(&a, &b).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    })
}

/// Fraction of `true` values among `n` judgments.
///
/// # Safety
/// `correct` must point to `n` bools; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urag_accuracy(correct: *const bool, n: usize, out: *mut f64) -> UragStatus {
    guard(|| {
        out_arg(out, "out")?;
        let js: Vec<Judgment> = slice_arg(correct, n, "correct")?
            .iter()
            .enumerate()
            .map(|(i, &c)| Judgment { question_id: i.to_string(), correct: c, tier: None })
            .collect();
        *out = urag::eval::accuracy(&js).map_err(|e| (UragStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Mean reciprocal rank of `n` 1-based ranks; 0 means nothing relevant was
/// retrieved.
///
/// # Safety
/// `ranks` must point to `n` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn urag_mrr(ranks: *const u32, n: usize, out: *mut f64) -> UragStatus {
    guard(|| {
        out_arg(out, "out")?;
        let results: Vec<RankedResult> = slice_arg(ranks, n, "ranks")?
            .iter()
            .enumerate()
            .map(|(i, &r)| RankedResult {
                query_id: i.to_string(),
                rank_of_first_relevant: if r == 0 { Rank::Infinite } else { Rank::At(r) },
            })
            .collect();
        *out = urag::eval::mrr(&results).map_err(|e| (UragStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn urag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
