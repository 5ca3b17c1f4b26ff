//! C ABI over the `ptagger` core.
//!
//! Conventions:
//! - every fallible call returns a [`PtStatus`] and writes its result through an out pointer;
//! - on failure, [`pt_last_error`] returns the message for the calling thread;
//! - strings handed out by the library are released with [`pt_string_free`], handles with
//!   their matching `*_free` function;
//! - structured values cross the boundary as JSON text.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use ptagger::compiler::{compile_tags, CompilerPolicy};
use ptagger::corpus::{parse_citation_record, LabelVocabulary};
use ptagger::error::{Error, ErrorClass};
use ptagger::eval::{auc_pr, auc_roc};
use ptagger::input::{assemble_input, WhitespaceTokenizer};
use ptagger::pipeline::{connect_sidecar, load_model, normalize_citation};
use ptagger::scorer::{ScoreVector, Scorer};
use ptagger::text::{normalize_text, SymbolMap};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtStatus {
    Ok = 0,
    /// Bad configuration or policy.
    Config = 1,
    /// Malformed or inconsistent input data.
    Data = 2,
    /// Scorer file or sidecar failure.
    Backend = 3,
    /// A null pointer or non-UTF-8 string was passed in.
    InvalidArgument = 4,
    /// The library panicked; the call had no effect.
    Panic = 5,
}

/// Opaque label vocabulary.
pub struct PtVocabulary(LabelVocabulary);

/// Opaque compiler policy.
pub struct PtPolicy(CompilerPolicy);

/// Opaque scorer: a reference model file or a connected sidecar.
pub struct PtScorer(Arc<dyn Scorer>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Core(Error),
    Arg(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

type Outcome = Result<(), Failure>;

/// Runs `f`, converting errors and panics into a status and a thread-local message.
fn guard(f: impl FnOnce() -> Outcome) -> PtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtStatus::Ok,
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            PtStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            match e.class() {
                ErrorClass::Config => PtStatus::Config,
                ErrorClass::Data => PtStatus::Data,
                ErrorClass::Backend => PtStatus::Backend,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            PtStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Arg(format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::Arg(format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T) -> Outcome {
    if out.is_null() {
        return Err(Failure::Arg("output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Outcome {
    let c = CString::new(s).map_err(|_| Failure::Arg("result contains a nul byte".into()))?;
    put(out, c.into_raw())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Outcome {
    put(out, Box::into_raw(Box::new(value)))
}

/// Message for the last failed call on this thread, or null. Free with [`pt_string_free`].
#[no_mangle]
pub extern "C" fn pt_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn pt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn pt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Cleans one title or abstract with the built-in symbol map.
///
/// # Safety
/// `raw` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_normalize_text(raw: *const c_char, out: *mut *mut c_char) -> PtStatus {
    guard(|| put_string(out, normalize_text(text(raw, "raw")?, &SymbolMap::default())))
}

/// Parses a vocabulary file's JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_vocabulary_from_json(json: *const c_char, out: *mut *mut PtVocabulary) -> PtStatus {
    guard(|| put_handle(out, PtVocabulary(LabelVocabulary::from_json(text(json, "json")?)?)))
}

/// # Safety
/// `v` must come from [`pt_vocabulary_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pt_vocabulary_free(v: *mut PtVocabulary) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Number of labels in the vocabulary; 0 for null.
///
/// # Safety
/// `v` must be a live vocabulary handle or null.
#[no_mangle]
pub unsafe extern "C" fn pt_vocabulary_len(v: *const PtVocabulary) -> usize {
    v.as_ref().map_or(0, |v| v.0.len())
}

/// Parses and validates a compiler policy against `vocab`.
///
/// # Safety
/// `json` must be a nul-terminated string, `vocab` a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_policy_from_json(
    json: *const c_char,
    vocab: *const PtVocabulary,
    out: *mut *mut PtPolicy,
) -> PtStatus {
    guard(|| {
        let vocab = handle(vocab, "vocab")?;
        put_handle(out, PtPolicy(CompilerPolicy::from_json(text(json, "json")?, &vocab.0)?))
    })
}

/// # Safety
/// `p` must come from [`pt_policy_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn pt_policy_free(p: *mut PtPolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Loads a reference scorer file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_scorer_load(path: *const c_char, out: *mut *mut PtScorer) -> PtStatus {
    guard(|| {
        let scorer = load_model(Path::new(text(path, "path")?))?;
        put_handle(out, PtScorer(Arc::new(scorer)))
    })
}

/// Connects to a sidecar at `tcp:host:port`, or starts one with `exec:program args`.
///
/// # Safety
/// `address` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_scorer_connect(address: *const c_char, out: *mut *mut PtScorer) -> PtStatus {
    guard(|| {
        let scorer = connect_sidecar(text(address, "address")?)?;
        put_handle(out, PtScorer(Arc::new(scorer)))
    })
}

/// The scorer's descriptor as JSON.
///
/// # Safety
/// `scorer` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_scorer_descriptor_json(scorer: *const PtScorer, out: *mut *mut c_char) -> PtStatus {
    guard(|| {
        let s = handle(scorer, "scorer")?;
        put_string(out, serde_json::to_string(s.0.descriptor())?)
    })
}

/// # Safety
/// `s` must come from a `pt_scorer_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn pt_scorer_free(s: *mut PtScorer) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

fn score_citation(scorer: &PtScorer, citation_json: &str, budget: usize) -> Result<ScoreVector, Failure> {
    let citation = parse_citation_record(citation_json, 1)?;
    let input = assemble_input(
        &normalize_citation(&citation, &SymbolMap::default()),
        &WhitespaceTokenizer,
        budget,
    )?;
    scorer
        .0
        .score_batch(std::slice::from_ref(&input))?
        .pop()
        .ok_or_else(|| Failure::Core(Error::Backend("scorer returned nothing".into())))
}

/// Normalizes, assembles and scores one citation record (JSON). Writes
/// `{"citation_id":..,"scores":{..}}`.
///
/// # Safety
/// `scorer` must be a live handle, `citation_json` a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_score_json(
    scorer: *const PtScorer,
    citation_json: *const c_char,
    token_budget: usize,
    out: *mut *mut c_char,
) -> PtStatus {
    guard(|| {
        let sv = score_citation(handle(scorer, "scorer")?, text(citation_json, "citation_json")?, token_budget)?;
        put_string(out, serde_json::to_string(&sv)?)
    })
}

/// Compiles a score vector (JSON, as written by [`pt_score_json`]) into a tag list
/// `{"id":..,"tags":[..],"provenance":[..]}`. The reliability filter is not applied
/// because no validation metrics travel with bare scores.
///
/// # Safety
/// Handles must be live, `scores_json` a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_compile_json(
    policy: *const PtPolicy,
    vocab: *const PtVocabulary,
    scores_json: *const c_char,
    out: *mut *mut c_char,
) -> PtStatus {
    guard(|| {
        let sv: ScoreVector = serde_json::from_str(text(scores_json, "scores_json")?)?;
        let tags = compile_tags(&sv, &handle(policy, "policy")?.0, &handle(vocab, "vocab")?.0, None)?;
        put_string(out, serde_json::to_string(&tags)?)
    })
}

/// Full pipeline for one citation record: normalize, assemble, score, compile.
///
/// # Safety
/// Handles must be live, `citation_json` a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_tag_json(
    scorer: *const PtScorer,
    policy: *const PtPolicy,
    vocab: *const PtVocabulary,
    citation_json: *const c_char,
    token_budget: usize,
    out: *mut *mut c_char,
) -> PtStatus {
    guard(|| {
        let scorer = handle(scorer, "scorer")?;
        let sv = score_citation(scorer, text(citation_json, "citation_json")?, token_budget)?;
        let descriptors = [scorer.0.descriptor().clone()];
        let tags = compile_tags(&sv, &handle(policy, "policy")?.0, &handle(vocab, "vocab")?.0, Some(&descriptors))?;
        put_string(out, serde_json::to_string(&tags)?)
    })
}

unsafe fn ranking_args<'a>(scores: *const f64, gold: *const u8, n: usize) -> Result<(&'a [f64], Vec<bool>), Failure> {
    if n > 0 && (scores.is_null() || gold.is_null()) {
        return Err(Failure::Arg("scores or gold is null".into()));
    }
    if n == 0 {
        return Ok((&[], Vec::new()));
    }
    let g = std::slice::from_raw_parts(gold, n).iter().map(|&b| b != 0).collect();
    Ok((std::slice::from_raw_parts(scores, n), g))
}

/// Area under the ROC curve; `gold[i]` non-zero marks a positive.
///
/// # Safety
/// `scores` and `gold` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_auc_roc(scores: *const f64, gold: *const u8, n: usize, out: *mut f64) -> PtStatus {
    guard(|| {
        let (s, g) = ranking_args(scores, gold, n)?;
        put(out, auc_roc(s, &g)?)
    })
}

/// Average precision (step-wise area under the precision/recall curve).
///
/// # Safety
/// `scores` and `gold` must point to `n` readable elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_auc_pr(scores: *const f64, gold: *const u8, n: usize, out: *mut f64) -> PtStatus {
    guard(|| {
        let (s, g) = ranking_args(scores, gold, n)?;
        put(out, auc_pr(s, &g)?)
    })
}
