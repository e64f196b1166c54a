//! C ABI over `coffee-core`.
//!
//! Every fallible function returns a status code: `COFFEE_OK` on success,
//! a negative code for misuse at the boundary, or a positive code naming
//! the library error category. The message for the most recent failure on
//! the calling thread is available from [`coffee_last_error`].
//!
//! Handles are opaque and owned by the caller once returned; release each
//! with its matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use coffee_core::data::{load_corpus, make_instances, EmotionLabel, Instance, NUM_CLASSES};
use coffee_core::error::Error;
use coffee_core::extract::{CsCache, Lexicons, Pipeline};
use coffee_core::model::Model;
use coffee_core::train::evaluate;

pub const COFFEE_NUM_CLASSES: usize = 8;
const _: () = assert!(COFFEE_NUM_CLASSES == NUM_CLASSES);

pub const COFFEE_OK: i32 = 0;
/// A required pointer argument was null.
pub const COFFEE_ERR_NULL: i32 = -1;
/// A string argument was not valid UTF-8.
pub const COFFEE_ERR_UTF8: i32 = -2;
/// An index argument was out of range.
pub const COFFEE_ERR_RANGE: i32 = -3;
/// The library panicked; the handle arguments should not be reused.
pub const COFFEE_ERR_PANIC: i32 = -4;

pub const COFFEE_ERR_DIMENSION: i32 = 1;
pub const COFFEE_ERR_NUMERIC: i32 = 2;
pub const COFFEE_ERR_CONTRACT: i32 = 3;
pub const COFFEE_ERR_EMPTY_INPUT: i32 = 4;
pub const COFFEE_ERR_PARSE: i32 = 5;
pub const COFFEE_ERR_LABEL: i32 = 6;
pub const COFFEE_ERR_INTEGRITY: i32 = 7;
pub const COFFEE_ERR_SELECTION: i32 = 8;
pub const COFFEE_ERR_SERVICE: i32 = 9;
pub const COFFEE_ERR_PROTOCOL: i32 = 10;
pub const COFFEE_ERR_STRATEGY: i32 = 11;
pub const COFFEE_ERR_SAMPLE: i32 = 12;
pub const COFFEE_ERR_CHECK: i32 = 13;
pub const COFFEE_ERR_CONFIG: i32 = 14;
pub const COFFEE_ERR_CHECKPOINT: i32 = 15;
pub const COFFEE_ERR_IO: i32 = 16;
pub const COFFEE_ERR_JSON: i32 = 17;

/// A trained model loaded from a checkpoint.
pub struct CoffeeModel(Model);

/// Instances built from a corpus file.
pub struct CoffeeCorpus(Vec<Instance>);

/// A commonsense cache.
pub struct CoffeeCache(CsCache);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(e.code(), e.to_string())
    }
}

type Outcome = Result<(), Fail>;

fn guard(f: impl FnOnce() -> Outcome) -> i32 {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => COFFEE_OK,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            COFFEE_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(COFFEE_ERR_NULL, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(COFFEE_ERR_UTF8, format!("{name} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(COFFEE_ERR_NULL, format!("{name} is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail(COFFEE_ERR_NULL, format!("{name} is null")));
    }
    Ok(())
}

unsafe fn cache_arg<'a>(p: *const CoffeeCache) -> Option<&'a CsCache> {
    p.as_ref().map(|c| &c.0)
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn coffee_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static lowercase name of label `index`, or null when out of range.
#[no_mangle]
pub extern "C" fn coffee_label_name(index: usize) -> *const c_char {
    const NAMES: [&CStr; NUM_CLASSES] = [
        c"anger",
        c"contempt",
        c"disgust",
        c"fear",
        c"joy",
        c"neutral",
        c"sadness",
        c"surprise",
    ];
    NAMES.get(index).map_or(ptr::null(), |n| n.as_ptr())
}

/// Load a checkpoint written by `coffee train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn coffee_model_load(path: *const c_char, out: *mut *mut CoffeeModel) -> i32 {
    guard(|| {
        out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let model = Model::load(&path)?;
        *out = Box::into_raw(Box::new(CoffeeModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`coffee_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn coffee_model_free(model: *mut CoffeeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Static name of the model's fusion strategy, or null for a null model.
///
/// # Safety
/// `model` must come from [`coffee_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn coffee_model_strategy(model: *const CoffeeModel) -> *const c_char {
    const NAMES: [(&str, &CStr); 4] = [
        ("none", c"none"),
        ("concat", c"concat"),
        ("dpa", c"dpa"),
        ("coffee", c"coffee"),
    ];
    match model.as_ref() {
        Some(m) => {
            let name = m.0.config.strategy.name();
            NAMES
                .iter()
                .find(|(n, _)| *n == name)
                .map_or(ptr::null(), |(_, c)| c.as_ptr())
        }
        None => ptr::null(),
    }
}

/// Load a JSONL corpus and build one instance per utterance, each with up
/// to `context_window` utterances of history.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn coffee_corpus_load(
    path: *const c_char,
    context_window: usize,
    out: *mut *mut CoffeeCorpus,
) -> i32 {
    guard(|| {
        out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let insts = make_instances(&load_corpus(&path)?, context_window)?;
        *out = Box::into_raw(Box::new(CoffeeCorpus(insts)));
        Ok(())
    })
}

/// Number of instances, or 0 for a null corpus.
///
/// # Safety
/// `corpus` must come from [`coffee_corpus_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn coffee_corpus_len(corpus: *const CoffeeCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// # Safety
/// `corpus` must come from [`coffee_corpus_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn coffee_corpus_free(corpus: *mut CoffeeCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Load a commonsense cache written by `coffee extract`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn coffee_cache_load(path: *const c_char, out: *mut *mut CoffeeCache) -> i32 {
    guard(|| {
        out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let cache = CsCache::load(&path)?;
        *out = Box::into_raw(Box::new(CoffeeCache(cache)));
        Ok(())
    })
}

/// # Safety
/// `cache` must come from [`coffee_cache_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn coffee_cache_free(cache: *mut CoffeeCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// Predict the emotion of instance `index`. `cache` may be null for
/// strategies that use no commonsense. `logits`, when not null, receives
/// `COFFEE_NUM_CLASSES` values.
///
/// # Safety
/// Handles must be live or null; `label` must be writable and `logits`
/// null or writable for `COFFEE_NUM_CLASSES` doubles.
#[no_mangle]
pub unsafe extern "C" fn coffee_predict(
    model: *const CoffeeModel,
    corpus: *const CoffeeCorpus,
    cache: *const CoffeeCache,
    index: usize,
    label: *mut usize,
    logits: *mut f64,
) -> i32 {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let insts = &ref_arg(corpus, "corpus")?.0;
        out_arg(label, "label")?;
        let inst = insts.get(index).ok_or_else(|| {
            Fail(
                COFFEE_ERR_RANGE,
                format!("index {index} outside 0..{}", insts.len()),
            )
        })?;
        let prepared = model.prepare(inst, cache_arg(cache))?;
        let (z, _) = model.logits(&prepared)?;
        *label = EmotionLabel::from_index(argmax(&z))?.index();
        if !logits.is_null() {
            ptr::copy_nonoverlapping(z.as_ptr(), logits, NUM_CLASSES);
        }
        Ok(())
    })
}

/// Score the model on every instance of `corpus`. `per_class_f1`, when
/// not null, receives `COFFEE_NUM_CLASSES` values.
///
/// # Safety
/// Handles must be live or null; `weighted_f1` must be writable and
/// `per_class_f1` null or writable for `COFFEE_NUM_CLASSES` doubles.
#[no_mangle]
pub unsafe extern "C" fn coffee_evaluate(
    model: *const CoffeeModel,
    corpus: *const CoffeeCorpus,
    cache: *const CoffeeCache,
    weighted_f1: *mut f64,
    per_class_f1: *mut f64,
) -> i32 {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let insts = &ref_arg(corpus, "corpus")?.0;
        out_arg(weighted_f1, "weighted_f1")?;
        let (report, _) = evaluate(model, insts, cache_arg(cache))?;
        *weighted_f1 = report.weighted_f1;
        if !per_class_f1.is_null() {
            ptr::copy_nonoverlapping(report.per_class_f1.as_ptr(), per_class_f1, NUM_CLASSES);
        }
        Ok(())
    })
}

/// Run the bundled extraction pipeline on `text` and return the generator
/// query. Release the result with [`coffee_string_free`].
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn coffee_topic_query(text: *const c_char, out: *mut *mut c_char) -> i32 {
    guard(|| {
        out_arg(out, "out")?;
        let text = str_arg(text, "text")?;
        let query = Pipeline::new(Lexicons::bundled()).run(text).query;
        *out = CString::new(query).expect("topics are ASCII").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn coffee_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}
