//! C ABI for confdel.
//!
//! Every fallible function returns a [`ConfdelStatus`]; on anything but
//! `CONFDEL_STATUS_OK` a message is available from [`confdel_last_error`]
//! on the same thread. Objects are opaque handles released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use confdel::align::{error_counts, levenshtein_align, EditWeights};
use confdel::corpus::{read_corpus, write_corpus, LabeledUtterance, Predictions};
use confdel::metrics::{self, ScoredSet};
use confdel::pipeline::{attach_targets, evaluate, Estimator};
use confdel::select::{self, Thresholds};
use confdel::simgen::{generate, preset, SimConfig};
use confdel::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfdelStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Degenerate = 5,
    Io = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Loaded corpus of utterances.
pub struct ConfdelCorpus {
    utterances: Vec<LabeledUtterance>,
}

/// Trained estimator bundle.
pub struct ConfdelEstimator {
    inner: Estimator,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct ConfdelErrorCounts {
    pub cor: usize,
    pub sub: usize,
    pub del: usize,
    pub ins: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct ConfdelThresholds {
    pub theta_c: f64,
    pub theta_d: f64,
    pub theta_s: f64,
    pub theta_p: f64,
}

/// Metric summary; deletion AUCs are NaN when the corpus has no deletion
/// predictions.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct ConfdelEvalReport {
    pub words: usize,
    pub nce: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub roc_auc_next_del: f64,
    pub roc_auc_start_del: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ConfdelStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } => ConfdelStatus::Parse,
            Error::Invalid { .. } | Error::Dimension { .. } => ConfdelStatus::InvalidArgument,
            Error::DegenerateReference(_) | Error::DegenerateClass(_) => ConfdelStatus::Degenerate,
            Error::Io(_) => ConfdelStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: ConfdelStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ConfdelStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ConfdelStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            ConfdelStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(ConfdelStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ConfdelStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(ConfdelStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(ConfdelStatus::NullPointer, format!("{name} is null")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(ConfdelStatus::NullPointer, format!("{name} is null")))
}

unsafe fn tokens_arg<'a>(p: *const *const c_char, n: usize, name: &str) -> Result<Vec<&'a str>, Failure> {
    slice_arg(p, n, name)?.iter().map(|&t| str_arg(t, name)).collect()
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn confdel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn confdel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ------------------------------------------------------------------ corpus

/// Reads a JSON-lines corpus.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn confdel_corpus_read(path: *const c_char, out: *mut *mut ConfdelCorpus) -> ConfdelStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let utterances = read_corpus(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(ConfdelCorpus { utterances }));
        Ok(())
    })
}

/// Generates a synthetic corpus from a named preset (`"matched"`,
/// `"mismatched"`) or the defaults when `preset_name` is NULL.
///
/// # Safety
/// `preset_name` must be NULL or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_simulate(
    preset_name: *const c_char,
    seed: u64,
    n_utts: usize,
    out: *mut *mut ConfdelCorpus,
) -> ConfdelStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let base = if preset_name.is_null() {
            SimConfig::default()
        } else {
            preset(str_arg(preset_name, "preset_name")?)?
        };
        let utterances = generate(&SimConfig { seed, n_utts, ..base })?;
        *out = Box::into_raw(Box::new(ConfdelCorpus { utterances }));
        Ok(())
    })
}

/// Writes the corpus, including any targets and predictions, atomically.
///
/// # Safety
/// `corpus` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn confdel_corpus_write(corpus: *const ConfdelCorpus, path: *const c_char) -> ConfdelStatus {
    guard(|| {
        let corpus = ref_arg(corpus, "corpus")?;
        write_corpus(&corpus.utterances, str_arg(path, "path")?)?;
        Ok(())
    })
}

/// Number of utterances; 0 for NULL.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn confdel_corpus_len(corpus: *const ConfdelCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.utterances.len())
}

/// Number of hypothesis words in utterance `index`; 0 when out of range.
///
/// # Safety
/// `corpus` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn confdel_corpus_utterance_len(corpus: *const ConfdelCorpus, index: usize) -> usize {
    corpus
        .as_ref()
        .and_then(|c| c.utterances.get(index))
        .map_or(0, |u| u.utterance.len())
}

/// Aligns every utterance with default costs and stores its targets.
///
/// # Safety
/// `corpus` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn confdel_corpus_align(corpus: *mut ConfdelCorpus) -> ConfdelStatus {
    guard(|| {
        let corpus = out_arg(corpus, "corpus")?;
        attach_targets(&mut corpus.utterances, &EditWeights::default())?;
        Ok(())
    })
}

/// Copies the confidence predictions of utterance `index` into `c_out`,
/// which must hold `confdel_corpus_utterance_len` values.
///
/// # Safety
/// `corpus` must be a live handle and `c_out` writable for `capacity` values.
#[no_mangle]
pub unsafe extern "C" fn confdel_corpus_confidences(
    corpus: *const ConfdelCorpus,
    index: usize,
    c_out: *mut f64,
    capacity: usize,
) -> ConfdelStatus {
    guard(|| {
        let corpus = ref_arg(corpus, "corpus")?;
        let utt = corpus
            .utterances
            .get(index)
            .ok_or_else(|| fail(ConfdelStatus::OutOfRange, format!("no utterance {index}")))?;
        let pred = utt
            .predictions
            .as_ref()
            .ok_or_else(|| fail(ConfdelStatus::InvalidArgument, format!("utterance {} has no predictions", utt.id())))?;
        if capacity < pred.c.len() {
            return Err(fail(
                ConfdelStatus::OutOfRange,
                format!("buffer holds {capacity}, need {}", pred.c.len()),
            ));
        }
        if c_out.is_null() {
            return Err(fail(ConfdelStatus::NullPointer, "c_out is null"));
        }
        ptr::copy_nonoverlapping(pred.c.as_ptr(), c_out, pred.c.len());
        Ok(())
    })
}

/// Scores the corpus predictions against its targets.
///
/// # Safety
/// `corpus` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_corpus_evaluate(
    corpus: *const ConfdelCorpus,
    out: *mut ConfdelEvalReport,
) -> ConfdelStatus {
    guard(|| {
        let corpus = ref_arg(corpus, "corpus")?;
        let out = out_arg(out, "out")?;
        let r = evaluate(&corpus.utterances)?;
        *out = ConfdelEvalReport {
            words: r.words,
            nce: r.nce,
            roc_auc: r.roc_auc,
            pr_auc: r.pr_auc,
            roc_auc_next_del: r.roc_auc_next_del.unwrap_or(f64::NAN),
            roc_auc_start_del: r.roc_auc_start_del.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}

/// # Safety
/// `corpus` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn confdel_corpus_free(corpus: *mut ConfdelCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

// --------------------------------------------------------------- estimator

/// Loads an estimator written by `confdel train-birnn`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_estimator_load(
    path: *const c_char,
    out: *mut *mut ConfdelEstimator,
) -> ConfdelStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = std::fs::read_to_string(str_arg(path, "path")?).map_err(Error::from)?;
        let inner = Estimator::from_json(&text)?;
        *out = Box::into_raw(Box::new(ConfdelEstimator { inner }));
        Ok(())
    })
}

/// Replaces the predictions of every utterance with the estimator's.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn confdel_estimator_predict(
    estimator: *const ConfdelEstimator,
    corpus: *mut ConfdelCorpus,
) -> ConfdelStatus {
    guard(|| {
        let est = ref_arg(estimator, "estimator")?;
        let corpus = out_arg(corpus, "corpus")?;
        let preds = corpus
            .utterances
            .iter()
            .map(|u| est.inner.predict(u))
            .collect::<confdel::Result<Vec<_>>>()?;
        for (u, p) in corpus.utterances.iter_mut().zip(preds) {
            u.predictions = Some(p);
        }
        Ok(())
    })
}

/// # Safety
/// `estimator` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn confdel_estimator_free(estimator: *mut ConfdelEstimator) {
    if !estimator.is_null() {
        drop(Box::from_raw(estimator));
    }
}

// ---------------------------------------------------------- plain functions

/// Minimum-cost alignment of `hyp` against `reference`. `counts` may be NULL.
///
/// # Safety
/// Token arrays must hold the stated number of NUL-terminated strings;
/// `cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_align(
    hyp: *const *const c_char,
    hyp_len: usize,
    reference: *const *const c_char,
    ref_len: usize,
    sub_cost: u32,
    del_cost: u32,
    ins_cost: u32,
    cost: *mut u64,
    counts: *mut ConfdelErrorCounts,
) -> ConfdelStatus {
    guard(|| {
        let hyp = tokens_arg(hyp, hyp_len, "hyp")?;
        let reference = tokens_arg(reference, ref_len, "reference")?;
        let weights = EditWeights::new(sub_cost, del_cost, ins_cost)?;
        let cost = out_arg(cost, "cost")?;
        let a = levenshtein_align(&hyp, &reference, weights);
        *cost = a.total_cost;
        if let Some(counts) = counts.as_mut() {
            let e = error_counts(&a);
            *counts = ConfdelErrorCounts {
                cor: e.cor,
                sub: e.sub,
                del: e.del,
                ins: e.ins,
            };
        }
        Ok(())
    })
}

unsafe fn scored_set(scores: *const f64, labels: *const u8, n: usize) -> Result<ScoredSet, Failure> {
    let scores = slice_arg(scores, n, "scores")?.to_vec();
    let labels = slice_arg(labels, n, "labels")?.iter().map(|&l| l != 0).collect();
    Ok(ScoredSet::new(scores, labels)?)
}

unsafe fn metric(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
    f: fn(&ScoredSet) -> confdel::Result<f64>,
) -> ConfdelStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = f(&scored_set(scores, labels, n)?)?;
        Ok(())
    })
}

/// Normalised cross entropy over `n` scores with 0/1 labels (nonzero is positive).
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_nce(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> ConfdelStatus {
    metric(scores, labels, n, out, metrics::nce)
}

/// ROC AUC over `n` scores with 0/1 labels (nonzero is positive).
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> ConfdelStatus {
    metric(scores, labels, n, out, metrics::roc_auc)
}

/// Precision-recall AUC over `n` scores with 0/1 labels (nonzero is positive).
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_pr_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> ConfdelStatus {
    metric(scores, labels, n, out, metrics::pr_auc)
}

/// Frame-weighted mean confidence of one utterance.
///
/// # Safety
/// `c` and `frames` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_frame_weighted_conf(
    c: *const f64,
    frames: *const u32,
    n: usize,
    out: *mut f64,
) -> ConfdelStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = select::frame_weighted_conf(slice_arg(c, n, "c")?, slice_arg(frames, n, "frames")?)?;
        Ok(())
    })
}

/// Thresholded WER estimate of one utterance; +infinity when nothing is
/// counted correct.
///
/// # Safety
/// `c` and `d` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn confdel_estimate_wer(
    c: *const f64,
    d: *const f64,
    n: usize,
    s: f64,
    thresholds: ConfdelThresholds,
    out: *mut f64,
) -> ConfdelStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let pred = Predictions::with_deletions(slice_arg(c, n, "c")?.to_vec(), slice_arg(d, n, "d")?.to_vec(), s);
        let th = Thresholds::new(thresholds.theta_c, thresholds.theta_d, thresholds.theta_s, thresholds.theta_p);
        th.validate()?;
        *out = select::estimate_wer(&pred, &th)?;
        Ok(())
    })
}
