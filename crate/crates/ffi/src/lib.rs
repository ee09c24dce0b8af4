//! C ABI over the tvsg toolkit.
//!
//! Fallible calls return a [`TvsgStatus`]; on failure the message is kept per
//! thread and read back with [`tvsg_last_error_message`]. Strings handed out by
//! the library are released with [`tvsg_string_free`], handles with their own
//! `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tvsg::anonymizer::MaskedInstanceSet;
use tvsg::evaluator::{predict_records, random_baseline, BaselineMode};
use tvsg::models::{CharacterModel, Decoding};
use tvsg::nn::Attention;
use tvsg::parser::{parse_episode, RuleConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvsgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Model = 5,
    InvalidArgument = 6,
    Panic = 7,
}

/// Loaded masked corpus.
pub struct TvsgCorpus {
    instances: Vec<MaskedInstanceSet>,
}

/// Loaded model checkpoint.
pub struct TvsgModel {
    model: CharacterModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl std::fmt::Display) {
    let text = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(text));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: TvsgStatus, msg: impl std::fmt::Display) -> TvsgStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into `Panic`.
fn guard(f: impl FnOnce() -> TvsgStatus) -> TvsgStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TvsgStatus::Panic, "panic inside tvsg"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, TvsgStatus> {
    if p.is_null() {
        return Err(fail(TvsgStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(TvsgStatus::InvalidUtf8, e))
}

fn give_string(s: String, out: *mut *mut c_char) -> TvsgStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            TvsgStatus::Ok
        }
        Err(e) => fail(TvsgStatus::InvalidArgument, e),
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next tvsg call on the same thread.
#[no_mangle]
pub extern "C" fn tvsg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tvsg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Reads a masked corpus from a JSONL file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tvsg_corpus_read(path: *const c_char, out: *mut *mut TvsgCorpus) -> TvsgStatus {
    guard(|| {
        if out.is_null() {
            return fail(TvsgStatus::NullPointer, "null output pointer");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match tvsg::dataset::read_corpus(path) {
            Ok(instances) => {
                *out = Box::into_raw(Box::new(TvsgCorpus { instances }));
                TvsgStatus::Ok
            }
            Err(tvsg::dataset::DatasetError::Io(e)) => fail(TvsgStatus::Io, format!("{path}: {e}")),
            Err(e) => fail(TvsgStatus::Parse, e),
        }
    })
}

/// Number of masked scenes, 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tvsg_corpus_len(corpus: *const TvsgCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.instances.len())
}

/// # Safety
/// `corpus` must be NULL or a handle from [`tvsg_corpus_read`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tvsg_corpus_free(corpus: *mut TvsgCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Expected accuracy of guessing uniformly among each scene's candidates.
/// With `trials` > 0 the value is simulated with `seed` instead.
///
/// # Safety
/// `corpus` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tvsg_random_baseline(corpus: *const TvsgCorpus, trials: usize, seed: u64, out: *mut f64) -> TvsgStatus {
    guard(|| {
        let (Some(c), false) = (corpus.as_ref(), out.is_null()) else {
            return fail(TvsgStatus::NullPointer, "null argument");
        };
        if c.instances.is_empty() {
            return fail(TvsgStatus::InvalidArgument, "corpus is empty");
        }
        let mode = if trials == 0 { BaselineMode::Analytic } else { BaselineMode::Simulated { trials, seed } };
        *out = random_baseline(&c.instances, mode);
        TvsgStatus::Ok
    })
}

/// Parses one raw episode with default rules, or with `rules_toml` when it is
/// not NULL. Writes the scenes as a JSON array to `out_json`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tvsg_parse_episode(
    raw: *const c_char,
    rules_toml: *const c_char,
    show: *const c_char,
    episode_id: *const c_char,
    out_json: *mut *mut c_char,
) -> TvsgStatus {
    guard(|| {
        if out_json.is_null() {
            return fail(TvsgStatus::NullPointer, "null output pointer");
        }
        let (raw, show, ep) = match (str_arg(raw), str_arg(show), str_arg(episode_id)) {
            (Ok(r), Ok(s), Ok(e)) => (r, s, e),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let rules = if rules_toml.is_null() {
            RuleConfig::default()
        } else {
            match str_arg(rules_toml).map(RuleConfig::from_toml) {
                Ok(Ok(r)) => r,
                Ok(Err(e)) => return fail(TvsgStatus::InvalidArgument, e),
                Err(s) => return s,
            }
        };
        match parse_episode(raw, &rules, show, ep) {
            Ok(scenes) => match serde_json::to_string(&scenes) {
                Ok(j) => give_string(j, out_json),
                Err(e) => fail(TvsgStatus::Parse, e),
            },
            Err(e) => fail(TvsgStatus::Parse, e),
        }
    })
}

/// Cohen's kappa over two equal-length integer label sequences.
///
/// # Safety
/// `a` and `b` must point to `n` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tvsg_cohen_kappa(a: *const i32, b: *const i32, n: usize, out: *mut f64) -> TvsgStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(TvsgStatus::NullPointer, "null argument");
        }
        let (a, b) = (std::slice::from_raw_parts(a, n), std::slice::from_raw_parts(b, n));
        match tvsg::annotation::cohen_kappa(a, b) {
            Ok(k) => {
                *out = k;
                TvsgStatus::Ok
            }
            Err(e) => fail(TvsgStatus::InvalidArgument, e),
        }
    })
}

/// Query-key pairs an attention layer evaluates for a sequence of `len`
/// tokens. `window` 0 means full attention.
#[no_mangle]
pub extern "C" fn tvsg_attention_pair_count(len: usize, window: usize) -> u64 {
    let att = if window == 0 { Attention::Full } else { Attention::Window(window) };
    tvsg::nn::attention_pair_count(len, att)
}

/// Loads a model checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tvsg_model_load(path: *const c_char, out: *mut *mut TvsgModel) -> TvsgStatus {
    guard(|| {
        if out.is_null() {
            return fail(TvsgStatus::NullPointer, "null output pointer");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match CharacterModel::load(path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(TvsgModel { model }));
                TvsgStatus::Ok
            }
            Err(e) => fail(TvsgStatus::Model, e),
        }
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`tvsg_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tvsg_model_free(model: *mut TvsgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts every masked speaker of `corpus`; writes JSON lines of
/// prediction records to `out_jsonl`. `joint` selects one-to-one decoding.
///
/// # Safety
/// Handles must be live; `out_jsonl` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tvsg_model_predict(
    model: *const TvsgModel,
    corpus: *const TvsgCorpus,
    joint: bool,
    out_jsonl: *mut *mut c_char,
) -> TvsgStatus {
    guard(|| {
        let (Some(m), Some(c), false) = (model.as_ref(), corpus.as_ref(), out_jsonl.is_null()) else {
            return fail(TvsgStatus::NullPointer, "null argument");
        };
        let decoding = if joint { Decoding::GreedyJoint } else { Decoding::Independent };
        let records = match predict_records(&m.model, &c.instances, decoding, false) {
            Ok(r) => r,
            Err(e) => return fail(TvsgStatus::Model, e),
        };
        let mut text = String::new();
        for r in &records {
            match serde_json::to_string(r) {
                Ok(line) => {
                    text.push_str(&line);
                    text.push('\n');
                }
                Err(e) => return fail(TvsgStatus::Model, e),
            }
        }
        give_string(text, out_jsonl)
    })
}
