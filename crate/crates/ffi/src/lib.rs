//! C ABI over `hiernote`.
//!
//! Every fallible call returns an [`HnStatus`] and writes its result through
//! an out-pointer. On failure the out-pointer is left untouched and
//! [`hn_last_error`] describes the failure on the calling thread.
//!
//! Handles (`HnCorpus`, `HnLexicon`, `HnMetrics`, `HnModel`) are opaque and
//! owned by the caller, who releases each with its `_free` function. Strings
//! returned through `char **` are released with [`hn_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use hiernote::ablation::{remove_topic_words, Lexicon};
use hiernote::corpus::{generate_corpus, load_corpus, save_corpus, Corpus, GeneratorSpec, Label};
use hiernote::hierarchy::FrozenPipeline;
use hiernote::metrics::{auroc, macro_scores, Prediction};
use hiernote::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Config = 6,
    /// Data rejected by a computation, e.g. AUROC over a single class.
    Data = 7,
    Model = 8,
    NotFound = 9,
    Panic = 10,
}

impl From<&Error> for HnStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => HnStatus::Io,
            Error::Parse { .. } | Error::Json(_) => HnStatus::Parse,
            Error::Config(_) | Error::Stage { .. } => HnStatus::Config,
            Error::SequenceTooLong { .. }
            | Error::TokenOutOfRange { .. }
            | Error::WidthMismatch { .. }
            | Error::ModelMismatch(_)
            | Error::Untrained
            | Error::Checkpoint(_)
            | Error::Divergence(_) => HnStatus::Model,
            _ => HnStatus::Data,
        }
    }
}

/// Macro-averaged scores over TT-No and TT-Yes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HnMacroScores {
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    /// Non-zero when some precision or recall had an empty denominator and
    /// was counted as 0.
    pub zero_division: u8,
}

pub struct HnCorpus(Corpus);
pub struct HnLexicon(Lexicon);
pub struct HnModel(FrozenPipeline);
/// Scored predictions; metrics are computed on demand.
pub struct HnMetrics(Vec<Prediction>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(text).expect("nul bytes replaced"));
}

struct Failure(HnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(HnStatus::from(&e), e.to_string())
    }
}

type Outcome = Result<(), Failure>;

/// Runs `body`, turning errors and panics into a status plus a message.
fn guard(body: impl FnOnce() -> Outcome) -> HnStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            HnStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let what = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {what}"));
            HnStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HnStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` is null or a valid NUL-terminated string.
unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(HnStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// # Safety
/// `ptr` is null or points to a live `T`.
unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `out` is null or writable.
unsafe fn put<T>(out: *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

/// # Safety
/// `out` is null or writable.
unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Outcome {
    put(out, Box::into_raw(Box::new(value)))
}

/// # Safety
/// `out` is null or writable.
unsafe fn put_string(out: *mut *mut c_char, text: String) -> Outcome {
    let c = CString::new(text).map_err(|_| Failure(HnStatus::InvalidArgument, "string holds a NUL byte".into()))?;
    put(out, c.into_raw())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` is null or was returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- corpus ---------------------------------------------------------------

/// Loads a JSONL corpus.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_corpus_load(path: *const c_char, out: *mut *mut HnCorpus) -> HnStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        put_handle(out, HnCorpus(load_corpus(path)?))
    })
}

/// Generates a synthetic corpus from a TOML generator spec.
///
/// # Safety
/// `spec_toml` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_corpus_generate(spec_toml: *const c_char, out: *mut *mut HnCorpus) -> HnStatus {
    guard(|| {
        let spec = GeneratorSpec::from_toml_str(read_str(spec_toml, "spec_toml")?)?;
        put_handle(out, HnCorpus(generate_corpus(&spec)?))
    })
}

/// # Safety
/// `corpus` is a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hn_corpus_save(corpus: *const HnCorpus, path: *const c_char) -> HnStatus {
    guard(|| {
        let corpus = deref(corpus, "corpus")?;
        save_corpus(&corpus.0, PathBuf::from(read_str(path, "path")?))?;
        Ok(())
    })
}

/// Number of patients.
///
/// # Safety
/// `corpus` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_corpus_len(corpus: *const HnCorpus, out: *mut usize) -> HnStatus {
    guard(|| put(out, deref(corpus, "corpus")?.0.len()))
}

/// Total number of notes.
///
/// # Safety
/// `corpus` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_corpus_note_count(corpus: *const HnCorpus, out: *mut usize) -> HnStatus {
    guard(|| put(out, deref(corpus, "corpus")?.0.note_count()))
}

/// Fraction of TT-Yes patients.
///
/// # Safety
/// `corpus` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_corpus_positive_fraction(corpus: *const HnCorpus, out: *mut f64) -> HnStatus {
    guard(|| put(out, deref(corpus, "corpus")?.0.positive_fraction()))
}

/// # Safety
/// `corpus` is null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_corpus_free(corpus: *mut HnCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

// ---- metrics --------------------------------------------------------------

/// Scores `n` predictions: `scores[i]` is P(TT-Yes) and `labels[i]` is
/// non-zero for TT-Yes. A prediction is TT-Yes iff its score exceeds 0.5.
///
/// # Safety
/// `scores` and `labels` point to `n` readable elements; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_metrics_new(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut *mut HnMetrics,
) -> HnStatus {
    guard(|| {
        if n > 0 && (scores.is_null() || labels.is_null()) {
            return Err(null("scores or labels"));
        }
        let (scores, labels) = if n == 0 {
            (&[][..], &[][..])
        } else {
            (std::slice::from_raw_parts(scores, n), std::slice::from_raw_parts(labels, n))
        };
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Failure(HnStatus::InvalidArgument, format!("score {i} is not finite")));
        }
        let predictions = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&s, &y))| {
                let label = if y != 0 { Label::TtYes } else { Label::TtNo };
                Prediction::from_score(i.to_string(), s, label)
            })
            .collect();
        put_handle(out, HnMetrics(predictions))
    })
}

/// Area under the ROC curve, ties credited one half. Fails with
/// `HN_STATUS_DATA` when only one class is present.
///
/// # Safety
/// `metrics` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_metrics_auroc(metrics: *const HnMetrics, out: *mut f64) -> HnStatus {
    guard(|| put(out, auroc(&deref(metrics, "metrics")?.0)?))
}

/// # Safety
/// `metrics` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_metrics_macro(metrics: *const HnMetrics, out: *mut HnMacroScores) -> HnStatus {
    guard(|| {
        let m = macro_scores(&deref(metrics, "metrics")?.0)?;
        put(
            out,
            HnMacroScores {
                macro_f1: m.macro_f1,
                macro_precision: m.macro_precision,
                macro_recall: m.macro_recall,
                zero_division: u8::from(m.zero_division()),
            },
        )
    })
}

/// # Safety
/// `metrics` is null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_metrics_free(metrics: *mut HnMetrics) {
    if !metrics.is_null() {
        drop(Box::from_raw(metrics));
    }
}

// ---- lexicon --------------------------------------------------------------

/// The shipped social-determinants lexicon.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_lexicon_default(out: *mut *mut HnLexicon) -> HnStatus {
    guard(|| put_handle(out, HnLexicon(Lexicon::sdoh())))
}

/// Loads a TOML lexicon.
///
/// # Safety
/// `path` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_lexicon_load(path: *const c_char, out: *mut *mut HnLexicon) -> HnStatus {
    guard(|| {
        let path = read_str(path, "path")?;
        put_handle(out, HnLexicon(Lexicon::load(path)?))
    })
}

/// Number of topics.
///
/// # Safety
/// `lexicon` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_lexicon_len(lexicon: *const HnLexicon, out: *mut usize) -> HnStatus {
    guard(|| put(out, deref(lexicon, "lexicon")?.0.topics.len()))
}

/// Key of topic `index`, as a new string.
///
/// # Safety
/// `lexicon` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_lexicon_topic_key(
    lexicon: *const HnLexicon,
    index: usize,
    out: *mut *mut c_char,
) -> HnStatus {
    guard(|| {
        let topics = &deref(lexicon, "lexicon")?.0.topics;
        let topic = topics
            .get(index)
            .ok_or_else(|| Failure(HnStatus::InvalidArgument, format!("topic {index} of {}", topics.len())))?;
        put_string(out, topic.key.clone())
    })
}

/// Number of whole-word keyword hits of topic `key` in `text`.
///
/// # Safety
/// `lexicon` is a live handle, `key` and `text` are NUL-terminated strings
/// and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_lexicon_count(
    lexicon: *const HnLexicon,
    key: *const c_char,
    text: *const c_char,
    out: *mut usize,
) -> HnStatus {
    guard(|| {
        let topic = find_topic(deref(lexicon, "lexicon")?, read_str(key, "key")?)?;
        put(out, topic.count_in(read_str(text, "text")?))
    })
}

/// `text` with every keyword of topic `key` deleted, as a new string.
///
/// # Safety
/// `lexicon` is a live handle, `key` and `text` are NUL-terminated strings
/// and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_lexicon_remove(
    lexicon: *const HnLexicon,
    key: *const c_char,
    text: *const c_char,
    out: *mut *mut c_char,
) -> HnStatus {
    guard(|| {
        let topic = find_topic(deref(lexicon, "lexicon")?, read_str(key, "key")?)?;
        put_string(out, remove_topic_words(read_str(text, "text")?, topic))
    })
}

fn find_topic<'a>(lexicon: &'a HnLexicon, key: &str) -> Result<&'a hiernote::ablation::Topic, Failure> {
    lexicon
        .0
        .topic(key)
        .ok_or_else(|| Failure(HnStatus::NotFound, format!("no topic `{key}`")))
}

/// # Safety
/// `lexicon` is null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_lexicon_free(lexicon: *mut HnLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

// ---- model ----------------------------------------------------------------

/// Loads a frozen pipeline from a model directory written by training
/// (`vocab.txt`, `encoder.ckpt` and, for multi-note models, `mlp.ckpt`).
///
/// # Safety
/// `dir` is a NUL-terminated string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_model_load(dir: *const c_char, out: *mut *mut HnModel) -> HnStatus {
    guard(|| {
        let dir = read_str(dir, "dir")?;
        put_handle(out, HnModel(FrozenPipeline::load(dir)?))
    })
}

/// `single` or `MS-n`, as a new string.
///
/// # Safety
/// `model` is a live handle and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_model_name(model: *const HnModel, out: *mut *mut c_char) -> HnStatus {
    guard(|| put_string(out, deref(model, "model")?.0.name()))
}

/// P(TT-Yes) for one patient of `corpus`.
///
/// # Safety
/// `model` and `corpus` are live handles, `patient_id` is a NUL-terminated
/// string and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn hn_model_score(
    model: *const HnModel,
    corpus: *const HnCorpus,
    patient_id: *const c_char,
    out: *mut f64,
) -> HnStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let id = read_str(patient_id, "patient_id")?;
        let patient = deref(corpus, "corpus")?
            .0
            .patient(id)
            .ok_or_else(|| Failure(HnStatus::NotFound, format!("no patient `{id}`")))?;
        put(out, model.0.score_with(patient, &str::to_owned)?)
    })
}

/// # Safety
/// `model` is null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hn_model_free(model: *mut HnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
